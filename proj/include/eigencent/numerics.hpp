// Dense double-precision vectors/matrices, softmax, RNG and finite-difference
// helpers shared by every other header in the library.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eigencent {

/// Thrown when a caller breaks a documented precondition (shape mismatch,
/// non-positive matrix, invalid config, ...).
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation that needs at least one valid position receives
/// a fully masked / empty sequence.
struct EmptySequenceError : ContractViolation {
    using ContractViolation::ContractViolation;
};

/// Thrown when training or a numerical routine produces NaN/Inf.
struct NumericalDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

using Vector = std::vector<double>;

/// Row-major dense matrix of 64-bit floats.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            require(row.size() == c, "Matrix::from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    Matrix& operator+=(const Matrix& other) {
        require(rows_ == other.rows_ && cols_ == other.cols_, "Matrix+=: shape mismatch");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

private:
    std::size_t rows_{0}, cols_{0};
    std::vector<double> data_;
};

inline bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (std::size_t k = 0; k < m.size(); ++k)
        if (!std::isfinite(m.data()[k])) return false;
    return true;
}

inline void require_finite(const Vector& v, const std::string& what) {
    if (!all_finite(v)) throw NumericalDivergence(what + ": non-finite entries");
}

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) throw NumericalDivergence(what + ": non-finite entries");
}

inline Vector matvec(const Matrix& m, const Vector& v) {
    require(m.cols() == v.size(), "matvec: m.cols != v.len");
    Vector out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* r = m.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += r[j] * v[j];
        out[i] = acc;
    }
    return out;
}

/// m^T * v without materializing the transpose.
inline Vector matvec_transposed(const Matrix& m, const Vector& v) {
    require(m.rows() == v.size(), "matvec_transposed: m.rows != v.len");
    Vector out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* r = m.row(i);
        const double vi = v[i];
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j] * vi;
    }
    return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ra = a.row(i);
        double* ro = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = ra[k];
            if (aik == 0.0) continue;
            const double* rb = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ro[j] += aik * rb[j];
        }
    }
    return out;
}

inline Matrix outer(const Vector& u, const Vector& v) {
    Matrix out(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = u[i] * v[j];
    return out;
}

inline double dot(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(const Vector& v) {
    require(!v.empty(), "l2_norm: empty vector");
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

inline double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) acc += m.data()[k] * m.data()[k];
    return std::sqrt(acc);
}

inline double max_abs(const Matrix& m) {
    double best = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) best = std::max(best, std::abs(m.data()[k]));
    return best;
}

inline void scale(Vector& v, double s) {
    for (double& x : v) x *= s;
}

inline void axpy(Vector& y, double a, const Vector& x) {
    require(y.size() == x.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline double vector_sum(const Vector& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

/// Softmax of a vector with max-subtraction for overflow safety.
inline Vector softmax(const Vector& logits) {
    require(!logits.empty(), "softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (double& x : out) x /= z;
    return out;
}

/// VJP of softmax: given w = softmax(s) and dL/dw, returns dL/ds.
inline Vector softmax_backward(const Vector& w, const Vector& dw) {
    require(w.size() == dw.size(), "softmax_backward: length mismatch");
    const double inner = dot(w, dw);
    Vector ds(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) ds[i] = w[i] * (dw[i] - inner);
    return ds;
}

/// Column-wise softmax: every output column sums to 1 and is strictly positive.
inline Matrix column_softmax(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.rows(); ++i) mx = std::max(mx, m(i, j));
        double z = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            out(i, j) = std::exp(m(i, j) - mx);
            z += out(i, j);
        }
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) /= z;
    }
    return out;
}

/// VJP of column_softmax: given a = column_softmax(s) and dL/da, returns dL/ds.
inline Matrix column_softmax_backward(const Matrix& a, const Matrix& da) {
    require(a.rows() == da.rows() && a.cols() == da.cols(),
            "column_softmax_backward: shape mismatch");
    Matrix ds(a.rows(), a.cols());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double inner = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) inner += a(i, j) * da(i, j);
        for (std::size_t i = 0; i < a.rows(); ++i) ds(i, j) = a(i, j) * (da(i, j) - inner);
    }
    return ds;
}

/// Central finite differences of a scalar function over every matrix entry.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                               const Matrix& m, double h) {
    require(h > 0.0, "finite_diff_grad: step must be positive");
    Matrix grad(m.rows(), m.cols());
    Matrix probe = m;
    for (std::size_t k = 0; k < m.size(); ++k) {
        const double orig = probe.data()[k];
        probe.data()[k] = orig + h;
        const double fp = f(probe);
        probe.data()[k] = orig - h;
        const double fm = f(probe);
        probe.data()[k] = orig;
        grad.data()[k] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

inline Vector finite_diff_grad_vec(const std::function<double(const Vector&)>& f,
                                   const Vector& v, double h) {
    require(h > 0.0, "finite_diff_grad_vec: step must be positive");
    Vector grad(v.size());
    Vector probe = v;
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double orig = probe[k];
        probe[k] = orig + h;
        const double fp = f(probe);
        probe[k] = orig - h;
        const double fm = f(probe);
        probe[k] = orig;
        grad[k] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// xoshiro256++ seeded through splitmix64. The stream depends only on the
/// seed, never on platform or process, so fixed seeds replay bit-identically.
class Rng {
public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            word = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller, no cached spare so the stream stays easy to reason about.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Unbiased integer in [0, n) via rejection.
    std::uint64_t uniform_below(std::uint64_t n) {
        require(n > 0, "uniform_below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_below(i)]);
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace eigencent
