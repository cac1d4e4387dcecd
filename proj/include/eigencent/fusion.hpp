// Fusion layer: contextualizes embedded tokens before aggregation. Two
// encoders are provided, a linear projection and a bidirectional Elman
// network with exact backpropagation through time. Recurrences run over the
// valid positions only, so padding never leaks into hidden states.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "eigencent/adjacency.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

/// Fused token representations; masked columns are kept zero.
struct HiddenStates {
    Matrix h;                         // d_h x n
    std::vector<std::uint8_t> valid;  // length n

    std::size_t valid_count() const {
        std::size_t c = 0;
        for (auto v : valid) c += v ? 1 : 0;
        return c;
    }
};

enum class FusionKind : std::uint8_t { identity_projection, bidirectional_elman };

struct ElmanCell {
    Matrix w;  // hidden x input
    Matrix u;  // hidden x hidden
    Vector b;  // hidden

    static ElmanCell init(std::size_t input, std::size_t hidden, Rng& rng) {
        ElmanCell c;
        c.w = Matrix(hidden, input);
        c.u = Matrix(hidden, hidden);
        c.b.assign(hidden, 0.0);
        const double sw = std::sqrt(2.0 / static_cast<double>(input + hidden));
        for (std::size_t k = 0; k < c.w.size(); ++k) c.w.data()[k] = rng.normal(0.0, sw);
        const double su = std::sqrt(1.0 / static_cast<double>(hidden));
        for (std::size_t k = 0; k < c.u.size(); ++k) c.u.data()[k] = rng.normal(0.0, su);
        return c;
    }

    static ElmanCell zeros(std::size_t input, std::size_t hidden) {
        ElmanCell c;
        c.w = Matrix(hidden, input);
        c.u = Matrix(hidden, hidden);
        c.b.assign(hidden, 0.0);
        return c;
    }
};

struct FusionEncoder {
    FusionKind kind{FusionKind::identity_projection};
    Matrix proj;          // identity_projection: d_out x d_in
    ElmanCell fwd, bwd;   // bidirectional_elman: one cell per direction

    std::size_t output_dim() const {
        return kind == FusionKind::identity_projection ? proj.rows() : 2 * fwd.w.rows();
    }
    std::size_t input_dim() const {
        return kind == FusionKind::identity_projection ? proj.cols() : fwd.w.cols();
    }

    static FusionEncoder identity_projection_init(std::size_t d_in, std::size_t d_out,
                                                  Rng& rng) {
        FusionEncoder f;
        f.kind = FusionKind::identity_projection;
        f.proj = Matrix(d_out, d_in);
        const double sd = std::sqrt(2.0 / static_cast<double>(d_in + d_out));
        for (std::size_t k = 0; k < f.proj.size(); ++k) f.proj.data()[k] = rng.normal(0.0, sd);
        return f;
    }

    static FusionEncoder bidirectional_elman_init(std::size_t d_in, std::size_t hidden,
                                                  Rng& rng) {
        FusionEncoder f;
        f.kind = FusionKind::bidirectional_elman;
        f.fwd = ElmanCell::init(d_in, hidden, rng);
        f.bwd = ElmanCell::init(d_in, hidden, rng);
        return f;
    }
};

struct FusionGrads {
    Matrix proj;
    ElmanCell fwd, bwd;

    static FusionGrads zeros_like(const FusionEncoder& f) {
        FusionGrads g;
        if (f.kind == FusionKind::identity_projection) {
            g.proj = Matrix(f.proj.rows(), f.proj.cols());
        } else {
            g.fwd = ElmanCell::zeros(f.fwd.w.cols(), f.fwd.w.rows());
            g.bwd = ElmanCell::zeros(f.bwd.w.cols(), f.bwd.w.rows());
        }
        return g;
    }
};

struct FuseCache {
    std::vector<std::size_t> idx;  // valid column indices in sequence order
    Matrix x;                      // input copy, d_in x n
    Matrix fwd_h, bwd_h;           // hidden x m recurrent states (elman only)
};

namespace detail {

inline void elman_run(const ElmanCell& cell, const Matrix& x,
                      const std::vector<std::size_t>& idx, bool reverse, Matrix& states) {
    const std::size_t hidden = cell.w.rows();
    const std::size_t m = idx.size();
    states = Matrix(hidden, m);
    Vector prev(hidden, 0.0);
    for (std::size_t step = 0; step < m; ++step) {
        const std::size_t k = reverse ? m - 1 - step : step;
        const std::size_t col = idx[k];
        for (std::size_t u = 0; u < hidden; ++u) {
            double acc = cell.b[u];
            const double* wr = cell.w.row(u);
            for (std::size_t i = 0; i < cell.w.cols(); ++i) acc += wr[i] * x(i, col);
            const double* ur = cell.u.row(u);
            for (std::size_t i = 0; i < hidden; ++i) acc += ur[i] * prev[i];
            states(u, k) = std::tanh(acc);
        }
        for (std::size_t u = 0; u < hidden; ++u) prev[u] = states(u, k);
    }
}

/// BPTT through one direction. dstates is hidden x m; accumulates into cell
/// grads and dx.
inline void elman_backward(const ElmanCell& cell, const Matrix& x,
                           const std::vector<std::size_t>& idx, bool reverse,
                           const Matrix& states, const Matrix& dstates, ElmanCell& grads,
                           Matrix& dx) {
    const std::size_t hidden = cell.w.rows();
    const std::size_t m = idx.size();
    Vector carry(hidden, 0.0);
    Vector da(hidden, 0.0);
    for (std::size_t step = m; step-- > 0;) {
        const std::size_t k = reverse ? m - 1 - step : step;
        const std::size_t col = idx[k];
        // previous state in recurrence order
        const bool has_prev = step > 0;
        const std::size_t kprev = reverse ? m - step : step - 1;
        for (std::size_t u = 0; u < hidden; ++u) {
            const double hval = states(u, k);
            da[u] = (dstates(u, k) + carry[u]) * (1.0 - hval * hval);
        }
        for (std::size_t u = 0; u < hidden; ++u) {
            const double d = da[u];
            if (d == 0.0) continue;
            grads.b[u] += d;
            double* gw = grads.w.row(u);
            for (std::size_t i = 0; i < cell.w.cols(); ++i) gw[i] += d * x(i, col);
            if (has_prev) {
                double* gu = grads.u.row(u);
                for (std::size_t i = 0; i < hidden; ++i) gu[i] += d * states(i, kprev);
            }
        }
        for (std::size_t i = 0; i < cell.w.cols(); ++i) {
            double acc = 0.0;
            for (std::size_t u = 0; u < hidden; ++u) acc += cell.w(u, i) * da[u];
            dx(i, col) += acc;
        }
        std::fill(carry.begin(), carry.end(), 0.0);
        if (has_prev) {
            for (std::size_t i = 0; i < hidden; ++i) {
                double acc = 0.0;
                for (std::size_t u = 0; u < hidden; ++u) acc += cell.u(u, i) * da[u];
                carry[i] = acc;
            }
        }
    }
}

}  // namespace detail

/// h_1..h_n = fuse(x_1..x_n). x is d_in x n; masked columns of the result
/// are zero. Pass a cache to enable fuse_backward.
inline HiddenStates fuse(const FusionEncoder& enc, const Matrix& x,
                         const std::vector<std::uint8_t>& mask, FuseCache* cache = nullptr) {
    require(mask.size() == x.cols(), "fuse: mask length mismatch");
    require(enc.input_dim() == x.rows(), "fuse: input dimension mismatch");
    const auto idx = valid_indices(mask);

    HiddenStates hs;
    hs.valid = mask;
    hs.h = Matrix(enc.output_dim(), x.cols());

    if (enc.kind == FusionKind::identity_projection) {
        for (std::size_t c : idx)
            for (std::size_t o = 0; o < enc.proj.rows(); ++o) {
                double acc = 0.0;
                const double* pr = enc.proj.row(o);
                for (std::size_t i = 0; i < x.rows(); ++i) acc += pr[i] * x(i, c);
                hs.h(o, c) = acc;
            }
        if (cache) {
            cache->idx = idx;
            cache->x = x;
        }
        return hs;
    }

    Matrix fwd_states, bwd_states;
    detail::elman_run(enc.fwd, x, idx, /*reverse=*/false, fwd_states);
    detail::elman_run(enc.bwd, x, idx, /*reverse=*/true, bwd_states);
    const std::size_t hidden = enc.fwd.w.rows();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t u = 0; u < hidden; ++u) {
            hs.h(u, idx[k]) = fwd_states(u, k);
            hs.h(hidden + u, idx[k]) = bwd_states(u, k);
        }
    }
    if (cache) {
        cache->idx = idx;
        cache->x = x;
        cache->fwd_h = std::move(fwd_states);
        cache->bwd_h = std::move(bwd_states);
    }
    return hs;
}

/// Exact VJP of fuse. dh is d_h x n (zero on masked columns); returns dx.
inline Matrix fuse_backward(const FusionEncoder& enc, const FuseCache& cache,
                            const Matrix& dh, FusionGrads& grads) {
    Matrix dx(cache.x.rows(), cache.x.cols());
    if (enc.kind == FusionKind::identity_projection) {
        for (std::size_t c : cache.idx) {
            for (std::size_t o = 0; o < enc.proj.rows(); ++o) {
                const double g = dh(o, c);
                if (g == 0.0) continue;
                double* pg = grads.proj.row(o);
                const double* pr = enc.proj.row(o);
                for (std::size_t i = 0; i < cache.x.rows(); ++i) {
                    pg[i] += g * cache.x(i, c);
                    dx(i, c) += g * pr[i];
                }
            }
        }
        return dx;
    }

    const std::size_t hidden = enc.fwd.w.rows();
    const std::size_t m = cache.idx.size();
    Matrix dfwd(hidden, m), dbwd(hidden, m);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t u = 0; u < hidden; ++u) {
            dfwd(u, k) = dh(u, cache.idx[k]);
            dbwd(u, k) = dh(hidden + u, cache.idx[k]);
        }
    detail::elman_backward(enc.fwd, cache.x, cache.idx, false, cache.fwd_h, dfwd, grads.fwd, dx);
    detail::elman_backward(enc.bwd, cache.x, cache.idx, true, cache.bwd_h, dbwd, grads.bwd, dx);
    return dx;
}

}  // namespace eigencent
