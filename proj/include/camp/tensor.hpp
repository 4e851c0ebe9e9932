#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "camp/errors.hpp"

#ifdef CAMP_HAVE_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace camp {

/// Dense row-major tensor of 64-bit floats. Tensors are plain values:
/// copyable, immutable once shared, and safe to read from any thread.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape product " + std::to_string(count(shape_)));
        }
    }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<size_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor identity(size_t n) {
        Tensor t({n, n});
        for (size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    size_t rows() const {
        assert(ndim() == 2);
        return shape_[0];
    }
    size_t cols() const {
        assert(ndim() == 2);
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& operator()(size_t i, size_t j) {
        assert(ndim() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }
    double operator()(size_t i, size_t j) const {
        assert(ndim() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Releases the backing storage; used by the autodiff tape to bound
    /// peak memory during backward.
    void release() {
        data_.clear();
        data_.shrink_to_fit();
        shape_.clear();
    }

    static size_t count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<size_t> shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Raw GEMM: C = alpha * op(A) * op(B) + beta * C, row-major with leading
// dimensions, so attention kernels can address submatrices in place.
// OpenBLAS is used above a size cutoff; the naive path covers tiny products
// where call overhead dominates, and builds without BLAS.
// ---------------------------------------------------------------------------

namespace detail {

/// Branchless exp core for x in [-700, 709]: Cody-Waite reduction and an
/// order-11 Taylor polynomial, ~1e-14 relative accuracy. Written so the
/// compiler can vectorize callers' loops; a pure deterministic function.
inline double fast_exp_core(double x) {
    constexpr double kLog2e = 1.4426950408889634074;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    const double kd = std::nearbyint(x * kLog2e);
    const int64_t k = static_cast<int64_t>(kd);
    const double r = (x - kd * kLn2Hi) - kd * kLn2Lo;
    double p = 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const uint64_t bits = static_cast<uint64_t>(k + 1023) << 52;
    double scale;
    std::memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

/// exp(x) for the full double range (0 below -745, inf above 709).
inline double fast_exp(double x) {
    if (x < -700.0) return x < -745.0 ? 0.0 : std::exp(x);
    if (x > 709.0) return std::numeric_limits<double>::infinity();
    return fast_exp_core(x);
}

/// Numerically stable logistic function built on fast_exp.
inline double fast_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + fast_exp(-x));
    const double e = fast_exp(x);
    return e / (1.0 + e);
}

inline void gemm_naive(bool ta, bool tb, size_t m, size_t n, size_t k, double alpha,
                       const double* a, size_t lda, const double* b, size_t ldb,
                       double beta, double* c, size_t ldc) {
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) {
                const double av = ta ? a[p * lda + i] : a[i * lda + p];
                const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            double& out = c[i * ldc + j];
            out = alpha * acc + (beta == 0.0 ? 0.0 : beta * out);
        }
    }
}

#ifdef CAMP_HAVE_OPENBLAS
struct BlasSingleThreadInit {
    BlasSingleThreadInit() { openblas_set_num_threads(1); }
};
inline void ensure_blas_single_threaded() {
    static BlasSingleThreadInit init;
    (void)init;
}
#endif

inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, double alpha,
                 const double* a, size_t lda, const double* b, size_t ldb,
                 double beta, double* c, size_t ldc) {
#ifdef CAMP_HAVE_OPENBLAS
    if (m * n * k >= 4096) {
        ensure_blas_single_threaded();
        cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                    static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                    static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
        return;
    }
#endif
    gemm_naive(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction helpers.
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shapes differ");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shapes differ");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor operator*(const Tensor& a, double s) {
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("hadamard: shapes differ");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

inline double frobenius_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shapes differ");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expected 2-d tensor");
    Tensor out({a.cols(), a.rows()});
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

/// Standard matrix product; inner dimensions must agree.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: expected 2-d tensors");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    }
    Tensor out({a.rows(), b.cols()});
    detail::gemm(false, false, a.rows(), b.cols(), a.cols(), 1.0, a.data(), a.cols(), b.data(),
                 b.cols(), 0.0, out.data(), out.cols());
    return out;
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling-and-squaring with a truncated Taylor core.
// Accurate to ~1e-13 relative against a plain series for ||A|| <= 10 at the
// dimensions used here (d <= 64).
// ---------------------------------------------------------------------------

inline double one_norm(const Tensor& a) {
    double best = 0.0;
    for (size_t j = 0; j < a.cols(); ++j) {
        double col = 0.0;
        for (size_t i = 0; i < a.rows(); ++i) col += std::abs(a(i, j));
        best = std::max(best, col);
    }
    return best;
}

inline Tensor matrix_exp(const Tensor& a) {
    if (a.ndim() != 2 || a.rows() != a.cols()) throw ShapeError("matrix_exp: expected square matrix");
    if (!a.all_finite()) throw DomainError("matrix_exp: non-finite input");

    const size_t d = a.rows();
    const double norm = one_norm(a);

    int squarings = 0;
    Tensor scaled = a;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
        scaled = a * std::ldexp(1.0, -squarings);
    }

    // Taylor series sum_{k} M^k / k! until terms vanish at double precision.
    Tensor result = Tensor::identity(d);
    Tensor term = Tensor::identity(d);
    for (int k = 1; k <= 40; ++k) {
        term = matmul(term, scaled) * (1.0 / k);
        result = result + term;
        if (max_abs(term) < 1e-18 * std::max(1.0, max_abs(result))) break;
    }

    for (int s = 0; s < squarings; ++s) result = matmul(result, result);
    return result;
}

// ---------------------------------------------------------------------------
// Linear least squares via normal equations with ridge jitter.
// ---------------------------------------------------------------------------

namespace detail {

/// In-place Cholesky of an SPD matrix; returns count of non-positive pivots.
inline size_t cholesky(Tensor& m) {
    const size_t n = m.rows();
    size_t bad = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (size_t k = 0; k < j; ++k) s -= m(i, k) * m(j, k);
            if (i == j) {
                if (s <= 1e-300) {
                    ++bad;
                    s = 1e-300;
                }
                m(i, i) = std::sqrt(s);
            } else {
                m(i, j) = s / m(j, j);
            }
        }
        for (size_t j = i + 1; j < n; ++j) m(i, j) = 0.0;
    }
    return bad;
}

inline std::vector<double> cholesky_solve(const Tensor& l, std::span<const double> rhs) {
    const size_t n = l.rows();
    std::vector<double> y(n), x(n);
    for (size_t i = 0; i < n; ++i) {
        double s = rhs[i];
        for (size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (size_t i = n; i-- > 0;) {
        double s = y[i];
        for (size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

}  // namespace detail

/// Minimizes ||design*beta - target||^2 with a small ridge term that keeps
/// near-collinear parents solvable instead of failing outright.
inline Tensor linear_least_squares(const Tensor& design, const Tensor& target,
                                   double ridge = 1e-8) {
    if (design.ndim() != 2) throw ShapeError("least squares: design must be 2-d");
    const size_t n = design.rows(), k = design.cols();
    if (target.size() != n) throw ShapeError("least squares: target length mismatch");
    if (n < k) throw ShapeError("least squares: fewer rows than columns");

    Tensor gram({k, k});
    detail::gemm(true, false, k, k, n, 1.0, design.data(), k, design.data(), k, 0.0, gram.data(), k);
    for (size_t i = 0; i < k; ++i) gram(i, i) += ridge;

    std::vector<double> rhs(k, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < k; ++j) rhs[j] += design(i, j) * target[i];

    const size_t bad = detail::cholesky(gram);
    if (bad > 0) {
        throw SingularityError(std::to_string(bad) + " of " + std::to_string(k) +
                               " columns rank-deficient beyond jitter");
    }
    auto beta = detail::cholesky_solve(gram, rhs);
    return Tensor({k}, std::move(beta));
}

}  // namespace camp
