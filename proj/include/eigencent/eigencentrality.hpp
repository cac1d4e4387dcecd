// Dominant eigenpair of a strictly positive matrix via the power method,
// plus batch convergence telemetry.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "eigencent/adjacency.hpp"
#include "eigencent/numerics.hpp"
#include "eigencent/parallel.hpp"

namespace eigencent {

enum class PowerInit : std::uint8_t { all_ones, seeded_positive_uniform };

struct PowerConfig {
    double epsilon{1e-10};
    std::size_t max_converge_steps{200};
    std::size_t grad_steps{20};
    PowerInit init{PowerInit::all_ones};
    std::uint64_t init_seed{0};  // only used by seeded_positive_uniform

    void validate() const {
        require(epsilon > 0.0, "PowerConfig: epsilon must be positive");
        require(max_converge_steps >= 1, "PowerConfig: max_converge_steps must be >= 1");
    }
};

struct EigenPair {
    Vector alpha;            // unit 2-norm, all components positive
    double lambda{0.0};
    std::size_t steps_taken{0};
    bool converged{false};
};

namespace detail {

inline Vector power_init_vector(std::size_t n, const PowerConfig& cfg) {
    Vector z(n, 1.0);
    if (cfg.init == PowerInit::seeded_positive_uniform) {
        Rng rng(cfg.init_seed);
        for (double& v : z) v = rng.uniform(0.1, 1.0);
    }
    return z;
}

}  // namespace detail

/// Power iteration: repeat { alpha = y/||y||; y = A alpha; theta = alpha.y }
/// until ||y - theta*alpha|| <= epsilon*|theta|. The convergence phase keeps
/// no per-step state. If max_converge_steps is exhausted the current iterate
/// is returned flagged unconverged.
inline EigenPair power_method(const Matrix& a, const PowerConfig& cfg) {
    cfg.validate();
    require(a.rows() == a.cols() && a.rows() >= 1, "power_method: matrix must be square");
    for (std::size_t k = 0; k < a.size(); ++k)
        require(a.data()[k] > 0.0, "power_method: matrix entries must be strictly positive");

    const std::size_t n = a.rows();
    Vector y = detail::power_init_vector(n, cfg);
    Vector alpha(n, 0.0);

    double theta = 0.0;
    std::size_t steps = 0;
    bool converged = false;
    while (steps < cfg.max_converge_steps) {
        ++steps;
        const double norm = l2_norm(y);
        for (std::size_t i = 0; i < n; ++i) alpha[i] = y[i] / norm;
        y = matvec(a, alpha);
        theta = dot(alpha, y);
        double resid = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - theta * alpha[i];
            resid += r * r;
        }
        if (std::sqrt(resid) <= cfg.epsilon * std::abs(theta)) {
            converged = true;
            break;
        }
    }

    EigenPair out;
    out.alpha = std::move(alpha);
    out.lambda = theta;
    out.steps_taken = steps;
    out.converged = converged;
    require_finite(out.alpha, "power_method");
    return out;
}

inline EigenPair power_method(const AdjacencyMatrix& a, const PowerConfig& cfg) {
    return power_method(a.a, cfg);
}

/// Histogram of power-method step counts over a batch of matrices.
struct ConvergeStats {
    std::vector<std::size_t> counts;  // counts[s] = matrices converged in s steps
    std::size_t total{0};
    std::size_t unconverged{0};       // hit max_converge_steps; counted in counts too

    std::size_t median_steps() const { return quantile_steps(0.5); }
    std::size_t p95_steps() const { return quantile_steps(0.95); }

    std::size_t quantile_steps(double q) const {
        if (total == 0) return 0;
        const double target = q * static_cast<double>(total - 1);
        std::size_t rank = static_cast<std::size_t>(target + 0.5);
        std::size_t seen = 0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            seen += counts[s];
            if (seen > rank) return s;
        }
        return counts.empty() ? 0 : counts.size() - 1;
    }
};

inline ConvergeStats converge_stats(const std::vector<AdjacencyMatrix>& batch,
                                    const PowerConfig& cfg) {
    if (batch.empty()) throw EmptySequenceError("converge_stats: empty batch");
    cfg.validate();
    std::vector<EigenPair> pairs(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) { pairs[i] = power_method(batch[i], cfg); });

    ConvergeStats stats;
    stats.counts.assign(cfg.max_converge_steps + 1, 0);
    stats.total = batch.size();
    for (const EigenPair& p : pairs) {
        stats.counts[p.steps_taken] += 1;
        if (!p.converged) stats.unconverged += 1;
    }
    return stats;
}

}  // namespace eigencent
