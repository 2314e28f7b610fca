#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "comlab/tensor.hpp"

namespace comlab {

using NodeId = int32_t;

/// Primitive operations recordable on a tape. Each has a forward rule and a
/// vector-Jacobian rule used by backward. silu_prime is a first-class
/// primitive (not just silu's derivative) so that graphs containing it — the
/// analytic input-gradient of the constants network — are themselves
/// differentiable: its backward applies the second derivative of silu.
enum class Op : uint8_t {
    leaf,             // tape input, no VJP
    matmul,           // (a x b) * (b x c) -> a x c
    add,              // elementwise, same shape
    sub,              // elementwise, same shape
    hadamard,         // elementwise product, same shape
    scale,            // (tensor, 1x1 scalar) -> tensor * scalar
    concat_rows,      // (r1 x c, r2 x c) -> (r1+r2) x c
    slice,            // contiguous sub-block, bounds in OpAttrs
    transpose,        // r x c -> c x r
    sum,              // all entries -> 1x1
    dot,              // flattened inner product of same-shape tensors -> 1x1
    sqnorm,           // sum of squares -> 1x1
    outer,            // (n x 1, m x 1) -> n x m
    reciprocal,       // elementwise 1/x
    sqrt_,            // elementwise sqrt
    relu,             // elementwise max(0, x)
    silu,             // elementwise x * sigmoid(x)
    silu_prime,       // elementwise d/dx silu(x)
    relu_indicator,   // elementwise 1[x > 0] (0 at x == 0); VJP is zero
    diag_from_vector, // n x 1 -> n x n diagonal matrix
    identity_minus,   // square X -> I - X
};

const char* op_name(Op op);

/// Extra arguments for ops that need them (currently only slice).
struct OpAttrs {
    int row0 = 0, nrows = 0, col0 = 0, ncols = 0;
};

struct TapeNode {
    Op op = Op::leaf;
    std::array<NodeId, 2> in{-1, -1};
    uint8_t n_in = 0;
    OpAttrs attrs;
    TensorValue value;
    // forward-pass byproduct reused by the VJP (sigmoid values for the
    // silu family), so backward needs no further transcendentals
    TensorValue aux;
};

/// Append-only record of a forward computation. Node inputs always reference
/// earlier ids, so the node sequence is a topologically ordered DAG. backward
/// never mutates forward values, only adjoints. A tape is single-threaded;
/// independent tapes may run concurrently. Node storage is a deque so that
/// references returned by value() stay valid while the tape grows.
class Tape {
public:
    /// Introduce an input (parameter, data, or constant). Leaves participate
    /// in backward as adjoint sinks only.
    NodeId leaf(TensorValue v);

    /// Generic primitive application; throws on unknown arity or shape
    /// mismatch, naming the primitive and the offending shapes.
    NodeId apply(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

    NodeId apply(Op op, NodeId a);
    NodeId apply(Op op, NodeId a, NodeId b);
    NodeId apply_slice(NodeId a, int row0, int nrows, int col0, int ncols);

    const TensorValue& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const TapeNode& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Reverse sweep from a scalar root. Seeds the root adjoint with 1 and
    /// propagates in reverse topological order. Returns the dense adjoint map
    /// (indexed by node id); forward values are untouched.
    std::vector<TensorValue> backward(NodeId root) const;

private:
    NodeId push(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs, TensorValue value);
    std::deque<TapeNode> nodes_;
};

double silu_scalar(double x);
double silu_prime_scalar(double x);
double silu_second_scalar(double x);

/// Builds a scalar function of a single tensor input on a fresh tape.
using TensorFn = std::function<NodeId(Tape&, NodeId)>;

/// Max over coordinates of |autodiff - central difference| / max(1, |central
/// difference|). Throws if f(x) is non-finite.
double finite_diff_check(const TensorFn& f, const TensorValue& x, double h);

} // namespace comlab
