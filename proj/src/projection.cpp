#include "comlab/projection.hpp"

#include <cmath>
#include <stdexcept>

namespace comlab {

NodeId assemble_A(Tape& tape, NodeId jacobian, NodeId sdot0) {
    const TensorValue& J = tape.value(jacobian);
    const TensorValue& d = tape.value(sdot0);
    const int n_c = J.rows;
    const int n_s = d.rows;
    if (d.cols != 1 || J.cols != n_s)
        throw std::invalid_argument("assemble_A: jacobian " + std::to_string(J.rows) + "x" +
                                    std::to_string(J.cols) + " does not match state dimension " +
                                    std::to_string(n_s));
    if (n_c >= n_s)
        throw std::invalid_argument("assemble_A: requires n_c < n_s, got n_c=" +
                                    std::to_string(n_c) + ", n_s=" + std::to_string(n_s));
    if (n_c == 0) return sdot0;
    // columns are J's rows followed by sdot0
    const NodeId stacked = tape.apply(Op::concat_rows, jacobian, tape.apply(Op::transpose, sdot0));
    return tape.apply(Op::transpose, stacked);
}

QrResult householder_qr(Tape& tape, NodeId A) {
    const TensorValue& Av = tape.value(A);
    const int n = Av.rows;
    const int m = Av.cols;
    if (m > n)
        throw std::invalid_argument("householder_qr: expected at most " + std::to_string(n) +
                                    " columns, got " + std::to_string(m));

    const NodeId two = tape.leaf(TensorValue::scalar(2.0));
    std::vector<NodeId> reflectors(static_cast<size_t>(m), -1);

    NodeId T = A;
    for (int k = 0; k < m; ++k) {
        // values must be read out before any apply: growing the tape can
        // invalidate references into it
        double sub = 0.0;
        double pivot;
        {
            const TensorValue& Tv = tape.value(T);
            for (int i = k + 1; i < n; ++i) sub += Tv.at(i, k) * Tv.at(i, k);
            pivot = Tv.at(k, k);
        }
        // sub-pivot norm decides whether a reflection is needed at all
        if (std::sqrt(sub) < 1e-12) continue;

        const NodeId x = tape.apply_slice(T, k, n - k, k, 1);
        const double sign = pivot >= 0.0 ? 1.0 : -1.0;

        // v = x + sign(pivot) * ||x|| * e1
        const NodeId norm_x = tape.apply(Op::sqrt_, tape.apply(Op::sqnorm, x));
        TensorValue e1(n - k, 1);
        e1.data[0] = sign;
        const NodeId v = tape.apply(Op::add, x, tape.apply(Op::scale, tape.leaf(std::move(e1)), norm_x));

        // H = I - (2 / ||v||^2) * w w^T with w = [0_k; v]
        const NodeId beta = tape.apply(Op::scale, tape.apply(Op::reciprocal, tape.apply(Op::sqnorm, v)), two);
        NodeId w = v;
        if (k > 0) w = tape.apply(Op::concat_rows, tape.leaf(TensorValue::zeros(k, 1)), v);
        const NodeId H = tape.apply(Op::identity_minus, tape.apply(Op::scale, tape.apply(Op::outer, w, w), beta));

        reflectors[static_cast<size_t>(k)] = H;
        T = tape.apply(Op::matmul, H, T);
    }

    // R = upper triangle of the transformed matrix; masking pins the entries
    // below the diagonal (and their gradients) to exact zero.
    TensorValue mask(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) mask.at(i, j) = 1.0;
    const NodeId R = tape.apply(Op::hadamard, tape.apply_slice(T, 0, m, 0, m), tape.leaf(std::move(mask)));

    // Q = H_0 * ... * H_{m-1} * E, applied right to left
    TensorValue E(n, m);
    for (int j = 0; j < m; ++j) E.at(j, j) = 1.0;
    NodeId Q = tape.leaf(std::move(E));
    for (int k = m; k-- > 0;)
        if (reflectors[static_cast<size_t>(k)] >= 0)
            Q = tape.apply(Op::matmul, reflectors[static_cast<size_t>(k)], Q);

    return QrResult{A, Q, R, n, m};
}

NodeId project_sdot(Tape& tape, const QrResult& qr, int n_c) {
    if (n_c + 1 != qr.m)
        throw std::invalid_argument("project_sdot: n_c=" + std::to_string(n_c) +
                                    " does not match factorization with " + std::to_string(qr.m) +
                                    " columns");
    if (n_c == 0) return qr.A; // no constraints: the single assembled column is sdot0
    const NodeId q_last = tape.apply_slice(qr.Q, 0, qr.n, n_c, 1);
    const NodeId r_last = tape.apply_slice(qr.R, n_c, 1, n_c, 1);
    return tape.apply(Op::matmul, q_last, r_last);
}

} // namespace comlab
