// Task architectures: flat sentence classification, hierarchical document
// classification and the NLI encoder pair. Everything is manually
// differentiated; each forward takes an optional cache that the matching
// backward consumes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "eigencent/adjacency.hpp"
#include "eigencent/aggregators.hpp"
#include "eigencent/eigencentrality.hpp"
#include "eigencent/fusion.hpp"
#include "eigencent/numerics.hpp"
#include "eigencent/powergrad.hpp"

namespace eigencent {

using TokenId = std::uint32_t;

enum class TaskKind : std::uint8_t { sentence, document, pair, synthetic };

inline const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::sentence: return "sentence";
        case TaskKind::document: return "document";
        case TaskKind::pair: return "pair";
        case TaskKind::synthetic: return "synthetic";
    }
    return "?";
}

inline std::size_t default_connectivity_hidden(TaskKind task) {
    return task == TaskKind::pair ? kNliConnectivityHidden : kClassificationConnectivityHidden;
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

struct EmbeddingTable {
    Matrix vectors;  // vocab_size x dim, one row per token
    TokenId pad_id{0}, unk_id{1};

    std::size_t vocab_size() const { return vectors.rows(); }
    std::size_t dim() const { return vectors.cols(); }

    /// Random init; the pad row stays zero and receives no gradient anywhere.
    static EmbeddingTable init(std::size_t vocab, std::size_t dim, Rng& rng) {
        EmbeddingTable t;
        t.vectors = Matrix(vocab, dim);
        for (std::size_t i = 0; i < vocab; ++i) {
            if (i == t.pad_id) continue;
            for (std::size_t j = 0; j < dim; ++j) t.vectors(i, j) = rng.normal(0.0, 0.1);
        }
        return t;
    }
};

struct EmbedResult {
    Matrix x;                         // d x n
    std::vector<std::uint8_t> mask;   // false at pad positions
};

inline EmbedResult embed(const EmbeddingTable& table, const std::vector<TokenId>& ids) {
    EmbedResult out;
    out.x = Matrix(table.dim(), ids.size());
    out.mask.assign(ids.size(), 0);
    for (std::size_t c = 0; c < ids.size(); ++c) {
        require(ids[c] < table.vocab_size(), "embed: token id out of range");
        if (ids[c] == table.pad_id) continue;
        out.mask[c] = 1;
        for (std::size_t k = 0; k < table.dim(); ++k) out.x(k, c) = table.vectors(ids[c], k);
    }
    return out;
}

/// Scatter-add of dx into the embedding gradient rows. Pad positions are
/// masked out, so the pad row never accumulates gradient.
inline void embed_backward(const EmbeddingTable& table, const std::vector<TokenId>& ids,
                           const std::vector<std::uint8_t>& mask, const Matrix& dx,
                           Matrix& grad_vectors) {
    require(dx.rows() == table.dim() && dx.cols() == ids.size(), "embed_backward: shape");
    for (std::size_t c = 0; c < ids.size(); ++c) {
        if (!mask[c]) continue;
        double* row = grad_vectors.row(ids[c]);
        for (std::size_t k = 0; k < table.dim(); ++k) row[k] += dx(k, c);
    }
}

// ---------------------------------------------------------------------------
// dropout (inverted; draws only over valid columns so padding never shifts
// the random stream)
// ---------------------------------------------------------------------------

inline Vector dropout_columns(Matrix& x, const std::vector<std::uint8_t>& mask, double rate,
                              Rng& rng) {
    const auto idx = valid_indices(mask);
    Vector factors(idx.size() * x.rows(), 1.0);
    if (rate <= 0.0) return factors;
    const double keep = 1.0 - rate;
    std::size_t pos = 0;
    for (std::size_t c : idx)
        for (std::size_t k = 0; k < x.rows(); ++k, ++pos) {
            const double f = rng.uniform() < rate ? 0.0 : 1.0 / keep;
            factors[pos] = f;
            x(k, c) *= f;
        }
    return factors;
}

inline void dropout_columns_backward(Matrix& dx, const std::vector<std::uint8_t>& mask,
                                     const Vector& factors) {
    const auto idx = valid_indices(mask);
    std::size_t pos = 0;
    for (std::size_t c : idx)
        for (std::size_t k = 0; k < dx.rows(); ++k, ++pos) dx(k, c) *= factors[pos];
}

// ---------------------------------------------------------------------------
// classifier head
// ---------------------------------------------------------------------------

struct ClassifierHead {
    Matrix w1;  // hidden x in
    Vector b1;
    Matrix w2;  // classes x hidden
    Vector b2;
    double dropout_rate{0.0};

    std::size_t n_classes() const { return w2.rows(); }
    std::size_t input_dim() const { return w1.cols(); }

    static ClassifierHead init(std::size_t in, std::size_t hidden, std::size_t classes,
                               double dropout, Rng& rng) {
        ClassifierHead h;
        h.w1 = Matrix(hidden, in);
        h.b1.assign(hidden, 0.0);
        h.w2 = Matrix(classes, hidden);
        h.b2.assign(classes, 0.0);
        h.dropout_rate = dropout;
        const double s1 = std::sqrt(2.0 / static_cast<double>(in + hidden));
        for (std::size_t k = 0; k < h.w1.size(); ++k) h.w1.data()[k] = rng.normal(0.0, s1);
        const double s2 = std::sqrt(2.0 / static_cast<double>(hidden + classes));
        for (std::size_t k = 0; k < h.w2.size(); ++k) h.w2.data()[k] = rng.normal(0.0, s2);
        return h;
    }
};

struct HeadGrads {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    static HeadGrads zeros_like(const ClassifierHead& h) {
        HeadGrads g;
        g.w1 = Matrix(h.w1.rows(), h.w1.cols());
        g.b1.assign(h.b1.size(), 0.0);
        g.w2 = Matrix(h.w2.rows(), h.w2.cols());
        g.b2.assign(h.b2.size(), 0.0);
        return g;
    }
};

struct HeadCache {
    Vector input;
    Vector t1;         // tanh activations
    Vector drop;       // dropout factors on t1
    Vector t1_dropped;
    Vector probs;
};

inline Vector head_forward(const ClassifierHead& head, const Vector& r, bool training,
                           Rng* rng, HeadCache* cache = nullptr) {
    require(r.size() == head.input_dim(), "head_forward: input dimension mismatch");
    Vector t1 = matvec(head.w1, r);
    for (std::size_t i = 0; i < t1.size(); ++i) t1[i] = std::tanh(t1[i] + head.b1[i]);

    Vector drop(t1.size(), 1.0);
    Vector t1d = t1;
    if (training && head.dropout_rate > 0.0) {
        const double keep = 1.0 - head.dropout_rate;
        for (std::size_t i = 0; i < t1d.size(); ++i) {
            const double f = rng->uniform() < head.dropout_rate ? 0.0 : 1.0 / keep;
            drop[i] = f;
            t1d[i] *= f;
        }
    }

    Vector logits = matvec(head.w2, t1d);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += head.b2[i];
    Vector probs = softmax(logits);
    if (cache) {
        cache->input = r;
        cache->t1 = std::move(t1);
        cache->drop = std::move(drop);
        cache->t1_dropped = std::move(t1d);
        cache->probs = probs;
    }
    return probs;
}

/// Backward from dL/dlogits; returns dL/dr.
inline Vector head_backward(const ClassifierHead& head, const HeadCache& cache,
                            const Vector& dlogits, HeadGrads& grads) {
    for (std::size_t c = 0; c < head.w2.rows(); ++c) {
        grads.b2[c] += dlogits[c];
        double* gw = grads.w2.row(c);
        for (std::size_t i = 0; i < head.w2.cols(); ++i) gw[i] += dlogits[c] * cache.t1_dropped[i];
    }
    Vector dt1 = matvec_transposed(head.w2, dlogits);
    for (std::size_t i = 0; i < dt1.size(); ++i) {
        dt1[i] *= cache.drop[i];
        dt1[i] *= 1.0 - cache.t1[i] * cache.t1[i];
    }
    for (std::size_t u = 0; u < head.w1.rows(); ++u) {
        grads.b1[u] += dt1[u];
        double* gw = grads.w1.row(u);
        for (std::size_t i = 0; i < head.w1.cols(); ++i) gw[i] += dt1[u] * cache.input[i];
    }
    return matvec_transposed(head.w1, dt1);
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

/// Negative log-probability of the gold label. Probabilities below 1e-12 are
/// clamped (with a warning) so the loss stays finite.
inline double cross_entropy(const Vector& probs, std::size_t label) {
    require(label < probs.size(), "cross_entropy: label out of range");
    double p = probs[label];
    if (p < 1e-12) {
        std::fprintf(stderr, "warning: cross_entropy clamped probability %.3e to 1e-12\n", p);
        p = 1e-12;
    }
    return -std::log(p);
}

/// dL/dlogits of softmax + NLL: probs - onehot(label).
inline Vector cross_entropy_grad_logits(const Vector& probs, std::size_t label) {
    Vector g = probs;
    g[label] -= 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// encoder = fusion + aggregation
// ---------------------------------------------------------------------------

struct Encoder {
    FusionEncoder fusion;
    AggregatorKind aggregator{AggregatorKind::eigen};
    ConnectivityScorer scorer;   // eigen only
    SelfAttentionParams attn;    // self_attn only
    PowerConfig power;

    std::size_t output_dim() const { return fusion.output_dim(); }
};

struct EncoderGrads {
    FusionGrads fusion;
    ScorerGrads scorer;
    Vector attn_q;

    static EncoderGrads zeros_like(const Encoder& e) {
        EncoderGrads g;
        g.fusion = FusionGrads::zeros_like(e.fusion);
        if (e.aggregator == AggregatorKind::eigen) g.scorer = ScorerGrads::zeros_like(e.scorer);
        if (e.aggregator == AggregatorKind::self_attn) g.attn_q.assign(e.attn.q.size(), 0.0);
        return g;
    }
};

struct EncodeCache {
    FuseCache fuse;
    HiddenStates hs;
    std::vector<std::size_t> idx;
    Matrix h_valid;              // d_h x m
    Matrix raw;                  // m x m connectivity scores (eigen)
    AdjacencyMatrix adj;         // eigen
    EigenPair eig;               // eigen
    AggregationWeights weights;  // eigen / self_attn / avg
    std::vector<std::size_t> argmax;  // max
    Vector r;
};

/// Embeddings (already dropped out) -> fused states -> aggregated vector.
inline Vector encode(const Encoder& enc, const Matrix& x,
                     const std::vector<std::uint8_t>& mask, EncodeCache* cache) {
    const auto idx = valid_indices(mask);
    if (idx.empty()) throw EmptySequenceError("encode: all positions masked");

    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    c.hs = fuse(enc.fusion, x, mask, &c.fuse);
    c.idx = idx;
    c.h_valid = compact_columns(c.hs.h, idx);

    switch (enc.aggregator) {
        case AggregatorKind::eigen: {
            c.raw = raw_scores(enc.scorer, c.h_valid);
            require_finite(c.raw, "encode: connectivity scores");
            c.adj.a = column_softmax(c.raw);
            // score spreads large enough to underflow the softmax mean the
            // parameters have degenerated, not that the caller erred
            for (std::size_t k = 0; k < c.adj.a.size(); ++k)
                if (!(c.adj.a.data()[k] > 0.0))
                    throw NumericalDivergence("encode: adjacency entry underflowed to zero");
            c.eig = power_method(c.adj, enc.power);
            c.weights = weights_from_alpha(c.eig.alpha);
            break;
        }
        case AggregatorKind::self_attn:
            c.weights = self_attention_weights(enc.attn, c.hs.h, mask);
            break;
        case AggregatorKind::max: {
            MaxPoolResult mp = max_pool(c.hs.h, mask);
            c.argmax = std::move(mp.argmax);
            c.r = std::move(mp.pooled);
            return c.r;
        }
        case AggregatorKind::avg:
            c.weights.kind = AggregatorKind::avg;
            c.weights.weights.assign(idx.size(), 1.0 / static_cast<double>(idx.size()));
            break;
    }
    c.r = aggregate(c.hs.h, mask, c.weights);
    return c.r;
}

/// Exact VJP of encode; accumulates into grads and returns dL/dx.
inline Matrix encode_backward(const Encoder& enc, const EncodeCache& c, const Vector& dr,
                              EncoderGrads& grads) {
    const std::size_t dh = c.hs.h.rows();
    const std::size_t n = c.hs.h.cols();
    const std::size_t m = c.idx.size();
    Matrix dH(dh, n);

    switch (enc.aggregator) {
        case AggregatorKind::eigen: {
            const auto eab = eigen_aggregate_backward(c.h_valid, c.adj, c.eig, dr,
                                                      enc.power.grad_steps);
            const Matrix draw = column_softmax_backward(c.adj.a, eab.grad_a);
            const auto rsb = raw_scores_backward(enc.scorer, c.h_valid, draw);
            grads.scorer.w1 += rsb.scorer.w1;
            for (std::size_t i = 0; i < grads.scorer.b1.size(); ++i)
                grads.scorer.b1[i] += rsb.scorer.b1[i];
            for (std::size_t i = 0; i < grads.scorer.w2.size(); ++i)
                grads.scorer.w2[i] += rsb.scorer.w2[i];
            grads.scorer.b2 += rsb.scorer.b2;
            for (std::size_t k = 0; k < dh; ++k)
                for (std::size_t cidx = 0; cidx < m; ++cidx)
                    dH(k, c.idx[cidx]) += eab.grad_h_direct(k, cidx) + rsb.h(k, cidx);
            break;
        }
        case AggregatorKind::self_attn: {
            // dL/dw then through the softmax, then into q and H
            Vector dw(m, 0.0);
            for (std::size_t cidx = 0; cidx < m; ++cidx)
                for (std::size_t k = 0; k < dh; ++k) dw[cidx] += dr[k] * c.h_valid(k, cidx);
            const Vector dlogit = softmax_backward(c.weights.weights, dw);
            for (std::size_t cidx = 0; cidx < m; ++cidx) {
                const std::size_t col = c.idx[cidx];
                for (std::size_t k = 0; k < dh; ++k) {
                    dH(k, col) += dr[k] * c.weights.weights[cidx] + dlogit[cidx] * enc.attn.q[k];
                    grads.attn_q[k] += dlogit[cidx] * c.h_valid(k, cidx);
                }
            }
            break;
        }
        case AggregatorKind::max:
            for (std::size_t k = 0; k < dh; ++k) dH(k, c.argmax[k]) += dr[k];
            break;
        case AggregatorKind::avg: {
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t cidx = 0; cidx < m; ++cidx)
                for (std::size_t k = 0; k < dh; ++k) dH(k, c.idx[cidx]) += dr[k] * inv;
            break;
        }
    }
    return fuse_backward(enc.fusion, c.fuse, dH, grads.fusion);
}

// ---------------------------------------------------------------------------
// NLI feature combination
// ---------------------------------------------------------------------------

/// r = [r_p; r_h; |r_p - r_h|; r_p * r_h]
inline Vector nli_combine(const Vector& rp, const Vector& rh) {
    require(rp.size() == rh.size(), "nli_combine: length mismatch");
    const std::size_t d = rp.size();
    Vector r(4 * d);
    for (std::size_t i = 0; i < d; ++i) {
        r[i] = rp[i];
        r[d + i] = rh[i];
        r[2 * d + i] = std::abs(rp[i] - rh[i]);
        r[3 * d + i] = rp[i] * rh[i];
    }
    return r;
}

/// VJP of nli_combine; |x| uses subgradient 0 at x = 0.
inline void nli_combine_backward(const Vector& rp, const Vector& rh, const Vector& dcomb,
                                 Vector& drp, Vector& drh) {
    const std::size_t d = rp.size();
    drp.assign(d, 0.0);
    drh.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = rp[i] - rh[i];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        drp[i] = dcomb[i] + sgn * dcomb[2 * d + i] + rh[i] * dcomb[3 * d + i];
        drh[i] = dcomb[d + i] - sgn * dcomb[2 * d + i] + rp[i] * dcomb[3 * d + i];
    }
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct ModelConfig {
    TaskKind task{TaskKind::sentence};
    AggregatorKind aggregator{AggregatorKind::eigen};
    FusionKind fusion{FusionKind::bidirectional_elman};
    std::size_t vocab_size{0};
    std::size_t n_classes{0};
    std::size_t embedding_dim{300};
    std::size_t fusion_hidden{300};        // per direction (elman) or output dim
    std::size_t connectivity_hidden{50};
    std::size_t head_hidden{64};
    double dropout_rate{0.0};
    PowerConfig power;
};

struct Model {
    ModelConfig cfg;
    EmbeddingTable embedding;
    Encoder encoder;       // word level
    Encoder doc_encoder;   // sentence-vector level (document task only)
    ClassifierHead head;

    static Model init(const ModelConfig& cfg, Rng& rng) {
        require(cfg.vocab_size >= 2, "Model: vocabulary must contain pad and unk");
        require(cfg.n_classes >= 2, "Model: need at least two classes");
        Model m;
        m.cfg = cfg;
        m.embedding = EmbeddingTable::init(cfg.vocab_size, cfg.embedding_dim, rng);
        m.encoder = init_encoder(cfg, cfg.embedding_dim, rng);
        std::size_t head_in = m.encoder.output_dim();
        if (cfg.task == TaskKind::document) {
            m.doc_encoder = init_encoder(cfg, m.encoder.output_dim(), rng);
            head_in = m.doc_encoder.output_dim();
        } else if (cfg.task == TaskKind::pair) {
            head_in = 4 * m.encoder.output_dim();
        }
        m.head = ClassifierHead::init(head_in, cfg.head_hidden, cfg.n_classes,
                                      cfg.dropout_rate, rng);
        return m;
    }

private:
    static Encoder init_encoder(const ModelConfig& cfg, std::size_t input_dim, Rng& rng) {
        Encoder e;
        e.aggregator = cfg.aggregator;
        e.power = cfg.power;
        e.fusion = cfg.fusion == FusionKind::identity_projection
                       ? FusionEncoder::identity_projection_init(input_dim, cfg.fusion_hidden, rng)
                       : FusionEncoder::bidirectional_elman_init(input_dim, cfg.fusion_hidden, rng);
        if (cfg.aggregator == AggregatorKind::eigen)
            e.scorer = ConnectivityScorer::init(e.fusion.output_dim(), cfg.connectivity_hidden, rng);
        if (cfg.aggregator == AggregatorKind::self_attn)
            e.attn = SelfAttentionParams::init(e.fusion.output_dim(), rng);
        return e;
    }
};

struct ModelGrads {
    Matrix embedding;
    EncoderGrads encoder;
    EncoderGrads doc_encoder;
    HeadGrads head;

    static ModelGrads zeros_like(const Model& m) {
        ModelGrads g;
        g.embedding = Matrix(m.embedding.vectors.rows(), m.embedding.vectors.cols());
        g.encoder = EncoderGrads::zeros_like(m.encoder);
        if (m.cfg.task == TaskKind::document)
            g.doc_encoder = EncoderGrads::zeros_like(m.doc_encoder);
        g.head = HeadGrads::zeros_like(m.head);
        return g;
    }
};

// ---------------------------------------------------------------------------
// flat sentence classification
// ---------------------------------------------------------------------------

struct FlatCache {
    std::vector<TokenId> ids;
    EmbedResult emb;
    Vector emb_drop;
    EncodeCache enc;
    HeadCache head;
};

inline Vector classify_flat(const Model& model, const std::vector<TokenId>& tokens,
                            bool training = false, Rng* rng = nullptr,
                            FlatCache* cache = nullptr) {
    if (tokens.empty()) throw EmptySequenceError("classify_flat: empty sentence");
    FlatCache local;
    FlatCache& c = cache ? *cache : local;
    c.ids = tokens;
    c.emb = embed(model.embedding, tokens);
    if (training && model.cfg.dropout_rate > 0.0)
        c.emb_drop = dropout_columns(c.emb.x, c.emb.mask, model.cfg.dropout_rate, *rng);
    const Vector r = encode(model.encoder, c.emb.x, c.emb.mask, &c.enc);
    return head_forward(model.head, r, training, rng, &c.head);
}

inline void classify_flat_backward(const Model& model, const FlatCache& c,
                                   const Vector& dlogits, ModelGrads& grads) {
    const Vector dr = head_backward(model.head, c.head, dlogits, grads.head);
    Matrix dx = encode_backward(model.encoder, c.enc, dr, grads.encoder);
    if (!c.emb_drop.empty()) dropout_columns_backward(dx, c.emb.mask, c.emb_drop);
    embed_backward(model.embedding, c.ids, c.emb.mask, dx, grads.embedding);
}

// ---------------------------------------------------------------------------
// hierarchical document classification
// ---------------------------------------------------------------------------

struct SentenceCache {
    std::vector<TokenId> ids;
    EmbedResult emb;
    Vector emb_drop;
    EncodeCache enc;
};

struct HierCache {
    std::vector<SentenceCache> sentences;
    Matrix sent_vecs;                  // d_h x S
    std::vector<std::uint8_t> sent_mask;
    EncodeCache doc;
    HeadCache head;
};

inline Vector classify_hierarchical(const Model& model,
                                    const std::vector<std::vector<TokenId>>& sentences,
                                    bool training = false, Rng* rng = nullptr,
                                    HierCache* cache = nullptr) {
    if (sentences.empty()) throw EmptySequenceError("classify_hierarchical: empty document");
    HierCache local;
    HierCache& c = cache ? *cache : local;
    c.sentences.clear();
    c.sentences.resize(sentences.size());
    c.sent_vecs = Matrix(model.encoder.output_dim(), sentences.size());
    c.sent_mask.assign(sentences.size(), 1);
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        SentenceCache& sc = c.sentences[s];
        sc.ids = sentences[s];
        if (sc.ids.empty()) throw EmptySequenceError("classify_hierarchical: empty sentence");
        sc.emb = embed(model.embedding, sc.ids);
        if (training && model.cfg.dropout_rate > 0.0)
            sc.emb_drop = dropout_columns(sc.emb.x, sc.emb.mask, model.cfg.dropout_rate, *rng);
        const Vector r = encode(model.encoder, sc.emb.x, sc.emb.mask, &sc.enc);
        for (std::size_t k = 0; k < r.size(); ++k) c.sent_vecs(k, s) = r[k];
    }
    const Vector doc = encode(model.doc_encoder, c.sent_vecs, c.sent_mask, &c.doc);
    return head_forward(model.head, doc, training, rng, &c.head);
}

inline void classify_hierarchical_backward(const Model& model, const HierCache& c,
                                           const Vector& dlogits, ModelGrads& grads) {
    const Vector ddoc = head_backward(model.head, c.head, dlogits, grads.head);
    const Matrix dsent = encode_backward(model.doc_encoder, c.doc, ddoc, grads.doc_encoder);
    for (std::size_t s = 0; s < c.sentences.size(); ++s) {
        const SentenceCache& sc = c.sentences[s];
        Vector dr(dsent.rows());
        for (std::size_t k = 0; k < dr.size(); ++k) dr[k] = dsent(k, s);
        Matrix dx = encode_backward(model.encoder, sc.enc, dr, grads.encoder);
        if (!sc.emb_drop.empty()) dropout_columns_backward(dx, sc.emb.mask, sc.emb_drop);
        embed_backward(model.embedding, sc.ids, sc.emb.mask, dx, grads.embedding);
    }
}

// ---------------------------------------------------------------------------
// NLI pair classification (premise/hypothesis encoders share parameters)
// ---------------------------------------------------------------------------

struct PairCache {
    SentenceCache premise, hypothesis;
    Vector rp, rh;
    HeadCache head;
};

inline Vector classify_pair(const Model& model, const std::vector<TokenId>& premise,
                            const std::vector<TokenId>& hypothesis, bool training = false,
                            Rng* rng = nullptr, PairCache* cache = nullptr) {
    PairCache local;
    PairCache& c = cache ? *cache : local;
    auto encode_side = [&](const std::vector<TokenId>& toks, SentenceCache& sc) {
        if (toks.empty()) throw EmptySequenceError("classify_pair: empty sentence");
        sc.ids = toks;
        sc.emb = embed(model.embedding, toks);
        if (training && model.cfg.dropout_rate > 0.0)
            sc.emb_drop = dropout_columns(sc.emb.x, sc.emb.mask, model.cfg.dropout_rate, *rng);
        return encode(model.encoder, sc.emb.x, sc.emb.mask, &sc.enc);
    };
    c.rp = encode_side(premise, c.premise);
    c.rh = encode_side(hypothesis, c.hypothesis);
    const Vector r = nli_combine(c.rp, c.rh);
    return head_forward(model.head, r, training, rng, &c.head);
}

inline void classify_pair_backward(const Model& model, const PairCache& c,
                                   const Vector& dlogits, ModelGrads& grads) {
    const Vector dcomb = head_backward(model.head, c.head, dlogits, grads.head);
    Vector drp, drh;
    nli_combine_backward(c.rp, c.rh, dcomb, drp, drh);
    auto backward_side = [&](const SentenceCache& sc, const Vector& dr) {
        Matrix dx = encode_backward(model.encoder, sc.enc, dr, grads.encoder);
        if (!sc.emb_drop.empty()) dropout_columns_backward(dx, sc.emb.mask, sc.emb_drop);
        embed_backward(model.embedding, sc.ids, sc.emb.mask, dx, grads.embedding);
    };
    backward_side(c.premise, drp);
    backward_side(c.hypothesis, drh);
}

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

/// Named views over the model parameters with matching gradient arrays and
/// Adam moment buffers. Registration order is fixed, so optimizer sweeps and
/// checkpoints are reproducible.
struct ParamStore {
    struct Entry {
        std::string name;
        double* param;
        double* grad;
        std::size_t size;
        Vector m, v;  // Adam moments
    };
    std::vector<Entry> entries;

    void add(std::string name, double* p, double* g, std::size_t size) {
        for (const Entry& e : entries)
            require(e.name != name, "ParamStore: duplicate name " + name);
        entries.push_back({std::move(name), p, g, size, Vector(size, 0.0), Vector(size, 0.0)});
    }
    void add(std::string name, Matrix& p, Matrix& g) {
        add(std::move(name), p.data(), g.data(), p.size());
    }
    void add(std::string name, Vector& p, Vector& g) {
        add(std::move(name), p.data(), g.data(), p.size());
    }
    void add(std::string name, double& p, double& g) { add(std::move(name), &p, &g, 1); }

    void zero_grads() {
        for (Entry& e : entries) std::fill(e.grad, e.grad + e.size, 0.0);
    }

    double grad_norm() const {
        double acc = 0.0;
        for (const Entry& e : entries)
            for (std::size_t i = 0; i < e.size; ++i) acc += e.grad[i] * e.grad[i];
        return std::sqrt(acc);
    }

    void scale_grads(double s) {
        for (Entry& e : entries)
            for (std::size_t i = 0; i < e.size; ++i) e.grad[i] *= s;
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const Entry& e : entries) n += e.size;
        return n;
    }

    /// Order-sensitive digest of the parameter values; used to prove that
    /// evaluation does not touch them.
    double param_checksum() const {
        double acc = 0.0;
        std::size_t k = 1;
        for (const Entry& e : entries)
            for (std::size_t i = 0; i < e.size; ++i, ++k)
                acc += e.param[i] * static_cast<double>(k % 97 + 1);
        return acc;
    }
};

namespace detail {

inline void register_encoder(ParamStore& ps, const std::string& prefix, Encoder& e,
                             EncoderGrads& g) {
    if (e.fusion.kind == FusionKind::identity_projection) {
        ps.add(prefix + ".fusion.proj", e.fusion.proj, g.fusion.proj);
    } else {
        ps.add(prefix + ".fusion.fwd.w", e.fusion.fwd.w, g.fusion.fwd.w);
        ps.add(prefix + ".fusion.fwd.u", e.fusion.fwd.u, g.fusion.fwd.u);
        ps.add(prefix + ".fusion.fwd.b", e.fusion.fwd.b, g.fusion.fwd.b);
        ps.add(prefix + ".fusion.bwd.w", e.fusion.bwd.w, g.fusion.bwd.w);
        ps.add(prefix + ".fusion.bwd.u", e.fusion.bwd.u, g.fusion.bwd.u);
        ps.add(prefix + ".fusion.bwd.b", e.fusion.bwd.b, g.fusion.bwd.b);
    }
    if (e.aggregator == AggregatorKind::eigen) {
        ps.add(prefix + ".scorer.w1", e.scorer.w1, g.scorer.w1);
        ps.add(prefix + ".scorer.b1", e.scorer.b1, g.scorer.b1);
        ps.add(prefix + ".scorer.w2", e.scorer.w2, g.scorer.w2);
        ps.add(prefix + ".scorer.b2", e.scorer.b2, g.scorer.b2);
    }
    if (e.aggregator == AggregatorKind::self_attn) ps.add(prefix + ".attn.q", e.attn.q, g.attn_q);
}

}  // namespace detail

inline ParamStore build_param_store(Model& m, ModelGrads& g) {
    ParamStore ps;
    ps.add("embedding.vectors", m.embedding.vectors, g.embedding);
    detail::register_encoder(ps, "encoder", m.encoder, g.encoder);
    if (m.cfg.task == TaskKind::document)
        detail::register_encoder(ps, "doc_encoder", m.doc_encoder, g.doc_encoder);
    ps.add("head.w1", m.head.w1, g.head.w1);
    ps.add("head.b1", m.head.b1, g.head.b1);
    ps.add("head.w2", m.head.w2, g.head.w2);
    ps.add("head.b2", m.head.b2, g.head.b2);
    return ps;
}

// ---------------------------------------------------------------------------
// pretrained embedding loader (whitespace text: token v1 ... vd per line)
// ---------------------------------------------------------------------------

/// Overwrites rows of the embedding table for tokens found in the file.
/// Returns the number of tokens loaded. Tokens absent from the file keep
/// their seeded random vectors.
template <typename TokenIndex>
std::size_t load_pretrained_embeddings(EmbeddingTable& table, const TokenIndex& lookup,
                                       std::istream& in) {
    std::size_t loaded = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t pos = line.find(' ');
        if (pos == std::string::npos) continue;
        const std::string token = line.substr(0, pos);
        const auto id = lookup(token);
        if (!id.has_value()) continue;
        Vector row;
        row.reserve(table.dim());
        const char* s = line.c_str() + pos;
        char* end = nullptr;
        for (;;) {
            const double v = std::strtod(s, &end);
            if (end == s) break;
            row.push_back(v);
            s = end;
        }
        require(row.size() == table.dim(),
                "load_pretrained_embeddings: dimension mismatch for token " + token);
        if (*id == table.pad_id) continue;  // pad row stays zero
        for (std::size_t k = 0; k < table.dim(); ++k) table.vectors(*id, k) = row[k];
        ++loaded;
    }
    return loaded;
}

}  // namespace eigencent
