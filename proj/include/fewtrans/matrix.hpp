#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fewtrans {

/// Dense row-major matrix of doubles. The workhorse container for batches,
/// weights, logits and activation maps.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// OpenMP-parallel kernels. Each output element is accumulated by exactly one
// thread in a fixed inner order, so results are bit-identical for any thread
// count (including the serial reference below).

/// a(m,k) * b(k,n) -> (m,n)
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a)(m,k') with a(k,m), times b(k,n) -> (m,n)
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a(m,k) * transpose(b) with b(n,k) -> (m,n)
Matrix matmul_nt(const Matrix& a, const Matrix& b);

void add_inplace(Matrix& a, const Matrix& b);
void sub_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);
/// a += s * b
void axpy_inplace(Matrix& a, double s, const Matrix& b);

/// Subtract the column mean from every entry (column centering).
Matrix center_columns(const Matrix& a);
/// sum of squared entries
double frobenius_sq(const Matrix& a);
bool all_finite(const Matrix& a);

namespace serial {
// Plain reference kernels kept for testing the parallel ones and for the
// benchmark comparison.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
}  // namespace serial

}  // namespace fewtrans
