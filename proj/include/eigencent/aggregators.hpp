// Sequence aggregation strategies: eigen-centrality attention, query
// self-attention, max pooling and average pooling, with exact backward for
// each. All functions treat masked columns as absent.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "eigencent/adjacency.hpp"
#include "eigencent/eigencentrality.hpp"
#include "eigencent/numerics.hpp"
#include "eigencent/powergrad.hpp"

namespace eigencent {

enum class AggregatorKind : std::uint8_t { eigen, self_attn, max, avg };

inline const char* aggregator_name(AggregatorKind k) {
    switch (k) {
        case AggregatorKind::eigen: return "eigen";
        case AggregatorKind::self_attn: return "self_attn";
        case AggregatorKind::max: return "max";
        case AggregatorKind::avg: return "avg";
    }
    return "?";
}

/// Convex weights over the valid positions.
struct AggregationWeights {
    Vector weights;  // length = number of valid positions, sums to 1
    AggregatorKind kind{AggregatorKind::avg};
};

struct SelfAttentionParams {
    Vector q;

    static SelfAttentionParams init(std::size_t d, Rng& rng) {
        SelfAttentionParams p;
        p.q.assign(d, 0.0);
        const double sd = std::sqrt(1.0 / static_cast<double>(d));
        for (double& v : p.q) v = rng.normal(0.0, sd);
        return p;
    }
};

/// Weighted sum over the valid columns of h; weights pair with the valid
/// columns in order.
inline Vector aggregate(const Matrix& h, const std::vector<std::uint8_t>& mask,
                        const AggregationWeights& w) {
    require(mask.size() == h.cols(), "aggregate: mask length mismatch");
    const auto idx = valid_indices(mask);
    require(w.weights.size() == idx.size(), "aggregate: weight count != valid columns");
    Vector out(h.rows(), 0.0);
    for (std::size_t c = 0; c < idx.size(); ++c)
        for (std::size_t k = 0; k < h.rows(); ++k) out[k] += w.weights[c] * h(k, idx[c]);
    return out;
}

/// Centrality scores renormalized to sum 1, so downstream scale does not
/// depend on sequence length.
inline AggregationWeights weights_from_alpha(const Vector& alpha) {
    AggregationWeights w;
    w.kind = AggregatorKind::eigen;
    w.weights = alpha;
    const double s = vector_sum(alpha);
    for (double& x : w.weights) x /= s;
    return w;
}

inline AggregationWeights eigen_weights(const AdjacencyMatrix& a, const PowerConfig& cfg) {
    return weights_from_alpha(power_method(a, cfg).alpha);
}

inline AggregationWeights self_attention_weights(const SelfAttentionParams& params,
                                                 const Matrix& h,
                                                 const std::vector<std::uint8_t>& mask) {
    require(params.q.size() == h.rows(), "self_attention_weights: q length != d");
    const auto idx = valid_indices(mask);
    if (idx.empty()) throw EmptySequenceError("self_attention_weights: all positions masked");
    Vector logits(idx.size(), 0.0);
    for (std::size_t c = 0; c < idx.size(); ++c)
        for (std::size_t k = 0; k < h.rows(); ++k) logits[c] += params.q[k] * h(k, idx[c]);
    AggregationWeights w;
    w.kind = AggregatorKind::self_attn;
    w.weights = softmax(logits);
    return w;
}

struct MaxPoolResult {
    Vector pooled;
    std::vector<std::size_t> argmax;  // column index per dimension (first on ties)
};

inline MaxPoolResult max_pool(const Matrix& h, const std::vector<std::uint8_t>& mask) {
    const auto idx = valid_indices(mask);
    if (idx.empty()) throw EmptySequenceError("max_pool: all positions masked");
    MaxPoolResult out;
    out.pooled.assign(h.rows(), 0.0);
    out.argmax.assign(h.rows(), idx[0]);
    for (std::size_t k = 0; k < h.rows(); ++k) {
        double best = h(k, idx[0]);
        for (std::size_t c = 1; c < idx.size(); ++c) {
            if (h(k, idx[c]) > best) {
                best = h(k, idx[c]);
                out.argmax[k] = idx[c];
            }
        }
        out.pooled[k] = best;
    }
    return out;
}

inline Vector average_pool(const Matrix& h, const std::vector<std::uint8_t>& mask) {
    const auto idx = valid_indices(mask);
    if (idx.empty()) throw EmptySequenceError("average_pool: all positions masked");
    AggregationWeights w;
    w.kind = AggregatorKind::avg;
    w.weights.assign(idx.size(), 1.0 / static_cast<double>(idx.size()));
    return aggregate(h, mask, w);
}

/// Backward of the eigen-centrality aggregation step. Inputs live on the
/// valid submatrix (h_valid is d x m, a is m x m). Returns the direct
/// aggregation contribution to dL/dH plus the matrix gradient obtained from
/// the analytic series; gamma is exposed for diagnostics.
struct EigenAggregateBackward {
    Matrix grad_h_direct;  // d x m
    Matrix grad_a;         // m x m
    Vector gamma;          // dL/dalpha after the sum-normalization Jacobian
};

inline EigenAggregateBackward eigen_aggregate_backward(const Matrix& h_valid,
                                                       const AdjacencyMatrix& a,
                                                       const EigenPair& eig,
                                                       const Vector& cot_hbar,
                                                       std::size_t trunc_k) {
    const std::size_t m = a.n();
    require(h_valid.cols() == m, "eigen_aggregate_backward: h/a size mismatch");
    require(cot_hbar.size() == h_valid.rows(), "eigen_aggregate_backward: cotangent length");

    const AggregationWeights w = weights_from_alpha(eig.alpha);

    EigenAggregateBackward out;
    // hbar = H w  =>  dL/dH = cot w^T
    out.grad_h_direct = outer(cot_hbar, w.weights);

    // dL/dw, then through w = alpha / sum(alpha)
    Vector dw = matvec_transposed(h_valid, cot_hbar);
    const double s = vector_sum(eig.alpha);
    const double inner = dot(dw, w.weights);
    out.gamma.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) out.gamma[i] = (dw[i] - inner) / s;

    out.grad_a = analytic_grad_a(a, eig, out.gamma, trunc_k);
    return out;
}

}  // namespace eigencent
