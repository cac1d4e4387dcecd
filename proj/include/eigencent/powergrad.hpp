// Backward passes for the power method.
//
// The analytic route contracts the series  dL/dA = sum_k gamma^T J_alpha^k J_A
// with a running cotangent, so memory stays O(n^2) no matter how deep the
// series is truncated. The explicit-unroll route records a short window of
// iterations after convergence and backpropagates through it; it exists as an
// independent cross-check of the analytic route.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "eigencent/eigencentrality.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

/// Running state of the truncated backward series.
struct BackwardState {
    Vector gamma;             // dL/dalpha at the converged iterate
    Matrix jac_alpha;         // n x n step-to-step Jacobian
    std::size_t trunc_k{20};
    Vector running_cotangent;
};

/// Jacobian of one normalized power step v -> Av/||Av|| at the fixed point:
/// (A - alpha alpha^T A) / lambda.
inline Matrix jac_wrt_alpha(const Matrix& a, const EigenPair& eig) {
    const std::size_t n = a.rows();
    require(a.cols() == n && eig.alpha.size() == n, "jac_wrt_alpha: shape mismatch");
    require(eig.lambda > 0.0, "jac_wrt_alpha: lambda must be positive");
    // alpha^T A as a row vector, then J = (A - alpha (alpha^T A)) / lambda
    const Vector at_a = matvec_transposed(a, eig.alpha);
    Matrix j(n, n);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = 0; q < n; ++q)
            j(p, q) = (a(p, q) - eig.alpha[p] * at_a[q]) / eig.lambda;
    return j;
}

inline Matrix jac_wrt_alpha(const AdjacencyMatrix& a, const EigenPair& eig) {
    return jac_wrt_alpha(a.a, eig);
}

/// Contraction of a cotangent with the (never materialized) n x n x n tensor
/// of eigenvector-vs-matrix partials:
///   G_qr = (cot_q alpha_r - (cot . alpha) alpha_q alpha_r) / lambda.
inline Matrix jac_wrt_a_apply(const Vector& cotangent, const EigenPair& eig) {
    const std::size_t n = eig.alpha.size();
    require(cotangent.size() == n, "jac_wrt_a_apply: cotangent length mismatch");
    const double inner = dot(cotangent, eig.alpha);
    Matrix g(n, n);
    for (std::size_t q = 0; q < n; ++q) {
        const double cq = cotangent[q] - inner * eig.alpha[q];
        for (std::size_t r = 0; r < n; ++r) g(q, r) = cq * eig.alpha[r] / eig.lambda;
    }
    return g;
}

/// Truncated analytic gradient of the loss w.r.t. the matrix. Accumulates
/// trunc_k + 1 series terms; stops early once a term's Frobenius norm drops
/// below term_norm_tol. No per-step buffers are kept.
inline Matrix analytic_grad_a(const Matrix& a, const EigenPair& eig, const Vector& gamma,
                              std::size_t trunc_k, double term_norm_tol = 1e-12) {
    require(gamma.size() == eig.alpha.size(), "analytic_grad_a: gamma length mismatch");
    BackwardState state;
    state.gamma = gamma;
    state.jac_alpha = jac_wrt_alpha(a, eig);
    state.trunc_k = trunc_k;
    state.running_cotangent = gamma;

    Matrix grad = jac_wrt_a_apply(state.running_cotangent, eig);
    for (std::size_t k = 1; k <= state.trunc_k; ++k) {
        state.running_cotangent = matvec_transposed(state.jac_alpha, state.running_cotangent);
        const Matrix term = jac_wrt_a_apply(state.running_cotangent, eig);
        grad += term;
        if (frobenius_norm(term) < term_norm_tol) break;
    }
    require_finite(grad, "analytic_grad_a");
    return grad;
}

inline Matrix analytic_grad_a(const AdjacencyMatrix& a, const EigenPair& eig,
                              const Vector& gamma, std::size_t trunc_k,
                              double term_norm_tol = 1e-12) {
    return analytic_grad_a(a.a, eig, gamma, trunc_k, term_norm_tol);
}

struct UnrolledGrad {
    Matrix grad_a;
    bool forward_converged{false};  // false means the window started unconverged
};

/// Reference backward: converge without recording, then record the output
/// step plus cfg.grad_steps extra iterations and backpropagate through the
/// stored window with the exact per-step VJP.
inline UnrolledGrad unrolled_grad_a(const Matrix& a, const PowerConfig& cfg,
                                    const Vector& gamma) {
    const EigenPair eig = power_method(a, cfg);
    const std::size_t n = a.rows();
    require(gamma.size() == n, "unrolled_grad_a: gamma length mismatch");

    const std::size_t window = cfg.grad_steps + 1;
    std::vector<Vector> iterates(window + 1);
    Vector norms(window, 0.0);
    iterates[0] = eig.alpha;
    for (std::size_t t = 0; t < window; ++t) {
        Vector y = matvec(a, iterates[t]);
        const double nu = l2_norm(y);
        for (double& v : y) v /= nu;
        norms[t] = nu;
        iterates[t + 1] = std::move(y);
    }

    UnrolledGrad out;
    out.grad_a = Matrix(n, n);
    out.forward_converged = eig.converged;
    Vector g = gamma;
    for (std::size_t t = window; t-- > 0;) {
        const Vector& next = iterates[t + 1];
        const Vector& prev = iterates[t];
        // VJP of y/||y||: gy = (g - (g.next) next) / nu
        const double inner = dot(g, next);
        Vector gy(n);
        for (std::size_t i = 0; i < n; ++i) gy[i] = (g[i] - inner * next[i]) / norms[t];
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t r = 0; r < n; ++r) out.grad_a(q, r) += gy[q] * prev[r];
        g = matvec_transposed(a, gy);
    }
    return out;
}

inline UnrolledGrad unrolled_grad_a(const AdjacencyMatrix& a, const PowerConfig& cfg,
                                    const Vector& gamma) {
    return unrolled_grad_a(a.a, cfg, gamma);
}

/// Gradient that would reach the initial vector z after the forward run:
/// gamma^T J_alpha^N with N = steps actually taken, plus the norm of the
/// running covector after every step (a geometric decay curve).
struct InitGradDecay {
    Vector grad_z;
    std::vector<double> norms;  // norms[k] = ||gamma^T J_alpha^(k+1)||
};

inline InitGradDecay grad_wrt_init_z(const Matrix& a, const PowerConfig& cfg,
                                     const Vector& gamma) {
    const EigenPair eig = power_method(a, cfg);
    require(gamma.size() == a.rows(), "grad_wrt_init_z: gamma length mismatch");
    const Matrix j = jac_wrt_alpha(a, eig);

    InitGradDecay out;
    out.norms.reserve(eig.steps_taken);
    // Keep the covector normalized and track log magnitude so deep decays
    // neither underflow the iteration nor distort the curve.
    Vector v = gamma;
    double log_scale = 0.0;
    bool dead = false;
    for (std::size_t k = 0; k < eig.steps_taken; ++k) {
        if (!dead) {
            v = matvec_transposed(j, v);
            const double nrm = l2_norm(v);
            if (nrm == 0.0) {
                dead = true;
            } else {
                log_scale += std::log(nrm);
                for (double& x : v) x /= nrm;
            }
        }
        out.norms.push_back(dead ? 0.0 : std::exp(log_scale));
    }
    out.grad_z.assign(a.rows(), 0.0);
    if (!dead) {
        const double s = std::exp(log_scale);
        for (std::size_t i = 0; i < v.size(); ++i) out.grad_z[i] = s * v[i];
    }
    return out;
}

inline InitGradDecay grad_wrt_init_z(const AdjacencyMatrix& a, const PowerConfig& cfg,
                                     const Vector& gamma) {
    return grad_wrt_init_z(a.a, cfg, gamma);
}

/// Spectral diagnostics at small n: the ratio governing both forward
/// convergence and backward series decay, and the left dominant eigenvector.
struct SpectralDiagnostics {
    double lambda2_over_lambda1{0.0};
    Vector left_eigvec_w;  // normalized so w . alpha = 1
};

inline SpectralDiagnostics spectral_diag(const Matrix& a, std::size_t iterations = 400) {
    require(a.rows() == a.cols() && a.rows() >= 1, "spectral_diag: matrix must be square");
    require(a.rows() <= 16, "spectral_diag: diagnostic limited to n <= 16");
    PowerConfig cfg;
    cfg.epsilon = 1e-14;
    cfg.max_converge_steps = 20000;
    const EigenPair eig = power_method(a, cfg);
    const std::size_t n = a.rows();

    SpectralDiagnostics diag;

    // left eigenvector via power iteration on A^T
    Vector w(n, 1.0);
    for (std::size_t k = 0; k < iterations; ++k) {
        w = matvec_transposed(a, w);
        const double nrm = l2_norm(w);
        for (double& x : w) x /= nrm;
    }
    const double wa = dot(w, eig.alpha);
    for (double& x : w) x /= wa;
    diag.left_eigvec_w = std::move(w);

    // spectral radius of the step Jacobian via normalized iteration; the
    // geometric mean of the tail growth rates is robust to oscillation
    const Matrix j = jac_wrt_alpha(a, eig);
    Vector v(n, 0.0);
    if (n == 1) return diag;
    // deterministic start with a component off the dominant direction
    for (std::size_t i = 0; i < n; ++i) v[i] = (i % 2 == 0) ? 1.0 : -0.5;
    {
        const double inner = dot(v, eig.alpha);
        axpy(v, -inner, eig.alpha);
        const double nrm = l2_norm(v);
        if (nrm == 0.0) return diag;
        for (double& x : v) x /= nrm;
    }
    double log_sum = 0.0;
    std::size_t tail = 0;
    const std::size_t burn_in = iterations / 2;
    for (std::size_t k = 0; k < iterations; ++k) {
        v = matvec(j, v);
        const double nrm = l2_norm(v);
        if (nrm == 0.0) return diag;  // rank-one A: ratio is exactly 0
        for (double& x : v) x /= nrm;
        if (k >= burn_in) {
            log_sum += std::log(nrm);
            ++tail;
        }
    }
    diag.lambda2_over_lambda1 = std::exp(log_sum / static_cast<double>(tail));
    return diag;
}

inline SpectralDiagnostics spectral_diag(const AdjacencyMatrix& a) { return spectral_diag(a.a); }

/// Coefficient of the dominant eigenvector in the expansion of z; nonzero for
/// any all-positive z (left eigenvector is positive).
inline double perron_coefficient(const SpectralDiagnostics& diag, const Vector& z) {
    return dot(diag.left_eigvec_w, z);
}

}  // namespace eigencent
