#pragma once

#include "comlab/tape.hpp"

namespace comlab {

/// Thin QR of an n x m matrix (m <= n) built from tape primitives, so the
/// factorization is differentiable end to end. Q has orthonormal columns;
/// R is upper-triangular with exact zeros below the diagonal.
struct QrResult {
    NodeId A = -1; // the factorized input, kept for the no-constraint path
    NodeId Q = -1; // n x m
    NodeId R = -1; // m x m
    int n = 0;
    int m = 0;
};

/// Stacks the constant-of-motion gradients and the raw derivative prediction
/// as columns: A = [grad c_1, ..., grad c_nc, sdot0], an n_s x (n_c+1) matrix.
/// Requires n_c < n_s.
NodeId assemble_A(Tape& tape, NodeId jacobian, NodeId sdot0);

/// Householder QR. The reflector sign follows the pivot sign (zero -> +1) to
/// avoid cancellation; columns whose sub-pivot norm is below 1e-12 use the
/// identity reflector, which keeps forward and backward finite for
/// degenerate inputs (e.g. all-zero gradients at initialization).
QrResult householder_qr(Tape& tape, NodeId A);

/// The projected state derivative: last column of Q times the last diagonal
/// entry of R. Equals (I - P) sdot0, with P the orthogonal projector onto the
/// span of the gradients, whenever the gradients are linearly independent.
/// With n_c == 0 returns sdot0 itself.
NodeId project_sdot(Tape& tape, const QrResult& qr, int n_c);

} // namespace comlab
