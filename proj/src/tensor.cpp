#include "comlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace comlab {

TensorValue TensorValue::scalar(double v) {
    TensorValue t(1, 1);
    t.data[0] = v;
    return t;
}

TensorValue TensorValue::column(std::span<const double> v) {
    TensorValue t(static_cast<int>(v.size()), 1);
    std::memcpy(t.data.data(), v.data(), v.size() * sizeof(double));
    return t;
}

TensorValue TensorValue::identity(int n) {
    TensorValue t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

TensorValue TensorValue::ones(int r, int c) {
    TensorValue t(r, c);
    for (double& x : t.data) x = 1.0;
    return t;
}

TensorValue TensorValue::from_rows(int r, int c, std::span<const double> v) {
    if (static_cast<size_t>(r) * c != v.size())
        throw std::invalid_argument("from_rows: value count does not match shape");
    TensorValue t(r, c);
    std::memcpy(t.data.data(), v.data(), v.size() * sizeof(double));
    return t;
}

bool TensorValue::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

bool TensorValue::bitwise_equal(const TensorValue& o) const {
    if (!same_shape(o)) return false;
    return data.empty() || std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
}

void gemm_acc(TensorValue& dst, const TensorValue& A, bool trans_a, const TensorValue& B,
              bool trans_b, double alpha) {
    const int m = trans_a ? A.cols : A.rows;
    const int k = trans_a ? A.rows : A.cols;
    const int kb = trans_b ? B.cols : B.rows;
    const int n = trans_b ? B.rows : B.cols;
    if (k != kb || dst.rows != m || dst.cols != n)
        throw std::invalid_argument("gemm_acc: nonconforming shapes");

    const double* a = A.data.data();
    const double* b = B.data.data();
    double* c = dst.data.data();
    const int lda = A.cols, ldb = B.cols, ldc = dst.cols;

    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<size_t>(i) * ldc;
            const double* arow = a + static_cast<size_t>(i) * lda;
            for (int p = 0; p < k; ++p) {
                const double aip = alpha * arow[p];
                const double* brow = b + static_cast<size_t>(p) * ldb;
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<size_t>(i) * ldc;
            const double* arow = a + static_cast<size_t>(i) * lda;
            for (int j = 0; j < n; ++j) {
                const double* brow = b + static_cast<size_t>(j) * ldb;
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += alpha * acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const double* arow = a + static_cast<size_t>(p) * lda;
            const double* brow = b + static_cast<size_t>(p) * ldb;
            for (int i = 0; i < m; ++i) {
                const double api = alpha * arow[i];
                double* crow = c + static_cast<size_t>(i) * ldc;
                for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<size_t>(i) * ldc;
            for (int j = 0; j < n; ++j) {
                const double* brow = b + static_cast<size_t>(j) * ldb;
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += a[static_cast<size_t>(p) * lda + i] * brow[p];
                crow[j] += alpha * acc;
            }
        }
    }
}

TensorValue matmul(const TensorValue& A, const TensorValue& B) {
    TensorValue C(A.rows, B.cols);
    gemm_acc(C, A, false, B, false);
    return C;
}

TensorValue transposed(const TensorValue& A) {
    TensorValue T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T.at(j, i) = A.at(i, j);
    return T;
}

void add_scaled(TensorValue& dst, const TensorValue& src, double alpha) {
    if (!dst.same_shape(src)) throw std::invalid_argument("add_scaled: shape mismatch");
    const size_t n = dst.data.size();
    for (size_t i = 0; i < n; ++i) dst.data[i] += alpha * src.data[i];
}

double frobenius_norm(const TensorValue& A) {
    double s = 0.0;
    for (double x : A.data) s += x * x;
    return std::sqrt(s);
}

double dot_flat(const TensorValue& a, const TensorValue& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot_flat: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

void orthonormalize_columns(TensorValue& A) {
    if (A.rows < A.cols) throw std::invalid_argument("orthonormalize_columns: rows < cols");
    auto col_dot = [&](int i, int j) {
        double s = 0.0;
        for (int r = 0; r < A.rows; ++r) s += A.at(r, i) * A.at(r, j);
        return s;
    };
    for (int j = 0; j < A.cols; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (int i = 0; i < j; ++i) {
                const double p = col_dot(i, j);
                for (int r = 0; r < A.rows; ++r) A.at(r, j) -= p * A.at(r, i);
            }
        }
        const double nrm = std::sqrt(col_dot(j, j));
        if (nrm < 1e-14)
            throw std::runtime_error("orthonormalize_columns: numerically dependent columns");
        for (int r = 0; r < A.rows; ++r) A.at(r, j) /= nrm;
    }
}

} // namespace comlab
