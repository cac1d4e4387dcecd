// Learned word-graph construction: a two-layer pairwise connectivity scorer
// followed by column-wise softmax, producing a strictly positive
// column-stochastic adjacency matrix over the valid (non padding) positions.
#pragma once

#include <cstddef>
#include <vector>

#include "eigencent/numerics.hpp"

namespace eigencent {

inline constexpr std::size_t kClassificationConnectivityHidden = 50;
inline constexpr std::size_t kNliConnectivityHidden = 30;

/// Pairwise scorer: score(i,j) = w2 . tanh(w1 [h_i; h_j] + b1) + b2.
struct ConnectivityScorer {
    Matrix w1;   // hidden_units x 2d
    Vector b1;   // hidden_units
    Vector w2;   // hidden_units
    double b2{0.0};

    std::size_t hidden_units() const { return w1.rows(); }
    std::size_t input_dim() const { return w1.cols() / 2; }

    static ConnectivityScorer zeros(std::size_t d, std::size_t hidden) {
        ConnectivityScorer s;
        s.w1 = Matrix(hidden, 2 * d);
        s.b1.assign(hidden, 0.0);
        s.w2.assign(hidden, 0.0);
        s.b2 = 0.0;
        return s;
    }

    /// Xavier-style init for the hidden layer, small output layer.
    static ConnectivityScorer init(std::size_t d, std::size_t hidden, Rng& rng) {
        require(hidden >= 1, "ConnectivityScorer: hidden_units must be >= 1");
        ConnectivityScorer s = zeros(d, hidden);
        const double sd1 = std::sqrt(2.0 / static_cast<double>(2 * d + hidden));
        for (std::size_t k = 0; k < s.w1.size(); ++k) s.w1.data()[k] = rng.normal(0.0, sd1);
        const double sd2 = std::sqrt(1.0 / static_cast<double>(hidden));
        for (auto& v : s.w2) v = rng.normal(0.0, sd2);
        return s;
    }
};

/// Gradients of a ConnectivityScorer, same shapes as the parameters.
struct ScorerGrads {
    Matrix w1;
    Vector b1;
    Vector w2;
    double b2{0.0};

    static ScorerGrads zeros_like(const ConnectivityScorer& s) {
        ScorerGrads g;
        g.w1 = Matrix(s.w1.rows(), s.w1.cols());
        g.b1.assign(s.b1.size(), 0.0);
        g.w2.assign(s.w2.size(), 0.0);
        g.b2 = 0.0;
        return g;
    }
};

/// Strictly positive column-stochastic relation matrix.
struct AdjacencyMatrix {
    Matrix a;
    std::size_t n() const { return a.rows(); }
};

/// Raw pairwise scores for all (i, j), including self pairs. h is d x n.
inline Matrix raw_scores(const ConnectivityScorer& scorer, const Matrix& h) {
    const std::size_t d = h.rows();
    const std::size_t n = h.cols();
    require(n >= 1, "raw_scores: need at least one column");
    require(scorer.input_dim() == d, "raw_scores: scorer width does not match h");
    const std::size_t hid = scorer.hidden_units();

    Matrix scores(n, n);
    Vector z(hid);
    // w1 [h_i; h_j] splits into the left and right halves of w1.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double out = scorer.b2;
            for (std::size_t u = 0; u < hid; ++u) {
                const double* w1r = scorer.w1.row(u);
                double acc = scorer.b1[u];
                for (std::size_t k = 0; k < d; ++k) acc += w1r[k] * h(k, i);
                for (std::size_t k = 0; k < d; ++k) acc += w1r[d + k] * h(k, j);
                out += scorer.w2[u] * std::tanh(acc);
            }
            scores(i, j) = out;
        }
    }
    return scores;
}

/// Exact VJP of raw_scores. cotangent is dL/dscores (n x n); returns scorer
/// gradients and dL/dh accumulated over all pairs.
struct RawScoresBackward {
    ScorerGrads scorer;
    Matrix h;  // d x n
};

inline RawScoresBackward raw_scores_backward(const ConnectivityScorer& scorer,
                                             const Matrix& h, const Matrix& cotangent) {
    const std::size_t d = h.rows();
    const std::size_t n = h.cols();
    require(scorer.input_dim() == d, "raw_scores_backward: scorer width does not match h");
    require(cotangent.rows() == n && cotangent.cols() == n,
            "raw_scores_backward: cotangent shape mismatch");
    const std::size_t hid = scorer.hidden_units();

    RawScoresBackward out;
    out.scorer = ScorerGrads::zeros_like(scorer);
    out.h = Matrix(d, n);

    Vector t(hid);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double ds = cotangent(i, j);
            if (ds == 0.0) continue;
            // recompute the hidden activations for this pair
            for (std::size_t u = 0; u < hid; ++u) {
                const double* w1r = scorer.w1.row(u);
                double acc = scorer.b1[u];
                for (std::size_t k = 0; k < d; ++k) acc += w1r[k] * h(k, i);
                for (std::size_t k = 0; k < d; ++k) acc += w1r[d + k] * h(k, j);
                t[u] = std::tanh(acc);
            }
            out.scorer.b2 += ds;
            for (std::size_t u = 0; u < hid; ++u) {
                out.scorer.w2[u] += ds * t[u];
                const double dz = ds * scorer.w2[u] * (1.0 - t[u] * t[u]);
                if (dz == 0.0) continue;
                out.scorer.b1[u] += dz;
                double* gw1r = out.scorer.w1.row(u);
                const double* w1r = scorer.w1.row(u);
                for (std::size_t k = 0; k < d; ++k) {
                    gw1r[k] += dz * h(k, i);
                    gw1r[d + k] += dz * h(k, j);
                    out.h(k, i) += dz * w1r[k];
                    out.h(k, j) += dz * w1r[d + k];
                }
            }
        }
    }
    return out;
}

inline std::vector<std::size_t> valid_indices(const std::vector<std::uint8_t>& mask) {
    std::vector<std::size_t> idx;
    idx.reserve(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    return idx;
}

/// Copy of the valid columns of h (d x n_valid).
inline Matrix compact_columns(const Matrix& h, const std::vector<std::size_t>& idx) {
    Matrix out(h.rows(), idx.size());
    for (std::size_t k = 0; k < h.rows(); ++k)
        for (std::size_t c = 0; c < idx.size(); ++c) out(k, c) = h(k, idx[c]);
    return out;
}

/// Builds the adjacency over the valid positions only: padded rows/columns are
/// excised before the softmax so every entry of the result is strictly
/// positive and every column sums to one.
inline AdjacencyMatrix build_adjacency(const ConnectivityScorer& scorer, const Matrix& h,
                                       const std::vector<std::uint8_t>& mask) {
    require(mask.size() == h.cols(), "build_adjacency: mask length must match columns");
    const auto idx = valid_indices(mask);
    if (idx.empty()) throw EmptySequenceError("build_adjacency: all positions masked");
    const Matrix hv = compact_columns(h, idx);
    AdjacencyMatrix adj;
    adj.a = column_softmax(raw_scores(scorer, hv));
    require_finite(adj.a, "build_adjacency");
    return adj;
}

}  // namespace eigencent
