#include "fewtrans/matrix.hpp"

#include <cmath>
#include <cstdint>

namespace fewtrans {

namespace {

void check_mul(std::size_t ak, std::size_t bk) {
    if (ak != bk) throw std::invalid_argument("matmul: inner dimensions disagree");
}

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelCutoff = 128 * 1024;

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.rows());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c(m, n);
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for if (m* n* k > kParallelCutoff) schedule(static)
    for (std::int64_t i = 0; i < mi; ++i) {
        const double* arow = ap + i * k;
        double* crow = cp + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += arow[t] * bp[t * n + j];
            crow[j] = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_mul(a.rows(), b.rows());
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Matrix c(m, n);
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for if (m* n* k > kParallelCutoff) schedule(static)
    for (std::int64_t i = 0; i < mi; ++i) {
        double* crow = cp + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += ap[t * m + i] * bp[t * n + j];
            crow[j] = acc;
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Matrix c(m, n);
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for if (m* n* k > kParallelCutoff) schedule(static)
    for (std::int64_t i = 0; i < mi; ++i) {
        const double* arow = ap + i * k;
        double* crow = cp + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bp + j * k;
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
            crow[j] = acc;
        }
    }
    return c;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    double* ap = a.data();
    const double* bp = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) ap[i] += bp[i];
}

void sub_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
    double* ap = a.data();
    const double* bp = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) ap[i] -= bp[i];
}

void scale_inplace(Matrix& a, double s) {
    for (double& v : a.values()) v *= s;
}

void axpy_inplace(Matrix& a, double s, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("axpy: shape mismatch");
    double* ap = a.data();
    const double* bp = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) ap[i] += s * bp[i];
}

Matrix center_columns(const Matrix& a) {
    Matrix c = a;
    const std::size_t n = a.rows(), d = a.cols();
    if (n == 0) return c;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += a(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) c(i, j) -= mean;
    }
    return c;
}

double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return s;
}

bool all_finite(const Matrix& a) {
    for (double v : a.values())
        if (!std::isfinite(v)) return false;
    return true;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.rows());
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < a.cols(); ++t) acc += a(i, t) * b(t, j);
            c(i, j) = acc;
        }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_mul(a.rows(), b.rows());
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < a.rows(); ++t) acc += a(t, i) * b(t, j);
            c(i, j) = acc;
        }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.cols());
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < a.cols(); ++t) acc += a(i, t) * b(j, t);
            c(i, j) = acc;
        }
    return c;
}

}  // namespace serial

}  // namespace fewtrans
