#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace comlab {

/// Dense row-major tensor of 64-bit floats. Everything in the engine is
/// rank-2: column vectors are n x 1 and scalars are 1 x 1. Zero-sized
/// dimensions are legal (an empty constants vector is 0 x 1).
struct TensorValue {
    int rows = 0;
    int cols = 0;
    std::vector<double> data; // size == rows * cols

    TensorValue() = default;
    TensorValue(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    static TensorValue zeros(int r, int c) { return TensorValue(r, c); }
    static TensorValue scalar(double v);
    static TensorValue column(std::span<const double> v);
    static TensorValue identity(int n);
    static TensorValue ones(int r, int c);
    /// Row-major fill from an initializer-style span.
    static TensorValue from_rows(int r, int c, std::span<const double> v);

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    int size() const { return rows * cols; }
    bool same_shape(const TensorValue& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    bool all_finite() const;
    bool bitwise_equal(const TensorValue& o) const;
};

/// dst += alpha * op(A) * op(B), shapes must already conform.
void gemm_acc(TensorValue& dst, const TensorValue& A, bool trans_a, const TensorValue& B,
              bool trans_b, double alpha = 1.0);

TensorValue matmul(const TensorValue& A, const TensorValue& B);
TensorValue transposed(const TensorValue& A);

/// dst += alpha * src (elementwise)
void add_scaled(TensorValue& dst, const TensorValue& src, double alpha = 1.0);

double frobenius_norm(const TensorValue& A);
double dot_flat(const TensorValue& a, const TensorValue& b);

/// In-place column orthonormalization (modified Gram-Schmidt, two passes).
/// Requires rows >= cols and numerically independent columns.
void orthonormalize_columns(TensorValue& A);

} // namespace comlab
