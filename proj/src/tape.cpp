#include "comlab/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace comlab {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::string shape_str(const TensorValue& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

[[noreturn]] void shape_error(Op op, const TensorValue& a) {
    throw std::invalid_argument(std::string(op_name(op)) + ": bad shape " + shape_str(a));
}

[[noreturn]] void shape_error(Op op, const TensorValue& a, const TensorValue& b) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shapes " + shape_str(a) + " and " +
                                shape_str(b) + " do not conform");
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::hadamard: return "hadamard";
        case Op::scale: return "scale";
        case Op::concat_rows: return "concat_rows";
        case Op::slice: return "slice";
        case Op::transpose: return "transpose";
        case Op::sum: return "sum";
        case Op::dot: return "dot";
        case Op::sqnorm: return "sqnorm";
        case Op::outer: return "outer";
        case Op::reciprocal: return "reciprocal";
        case Op::sqrt_: return "sqrt";
        case Op::relu: return "relu";
        case Op::silu: return "silu";
        case Op::silu_prime: return "silu_prime";
        case Op::relu_indicator: return "relu_indicator";
        case Op::diag_from_vector: return "diag_from_vector";
        case Op::identity_minus: return "identity_minus";
    }
    return "unknown";
}

double silu_scalar(double x) { return x * sigmoid(x); }

double silu_prime_scalar(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

double silu_second_scalar(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}

NodeId Tape::leaf(TensorValue v) { return push(Op::leaf, {}, {}, std::move(v)); }

NodeId Tape::apply(Op op, NodeId a) { return apply(op, std::array<NodeId, 1>{a}); }

NodeId Tape::apply(Op op, NodeId a, NodeId b) { return apply(op, std::array<NodeId, 2>{a, b}); }

NodeId Tape::apply_slice(NodeId a, int row0, int nrows, int col0, int ncols) {
    return apply(Op::slice, std::array<NodeId, 1>{a}, OpAttrs{row0, nrows, col0, ncols});
}

NodeId Tape::push(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs, TensorValue value) {
    TapeNode n;
    n.op = op;
    n.n_in = static_cast<uint8_t>(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i] < 0 || static_cast<size_t>(inputs[i]) >= nodes_.size())
            throw std::invalid_argument(std::string(op_name(op)) + ": input id out of range");
        n.in[i] = inputs[i];
    }
    n.attrs = attrs;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::apply(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs) {
    auto arity = [&](size_t want) {
        if (inputs.size() != want)
            throw std::invalid_argument(std::string(op_name(op)) + ": expects " +
                                        std::to_string(want) + " inputs, got " +
                                        std::to_string(inputs.size()));
    };
    auto val = [&](size_t i) -> const TensorValue& { return value(inputs[i]); };

    switch (op) {
        case Op::leaf:
            throw std::invalid_argument("apply: leaf is not a primitive; use Tape::leaf");

        case Op::matmul: {
            arity(2);
            const TensorValue &A = val(0), &B = val(1);
            if (A.cols != B.rows) shape_error(op, A, B);
            TensorValue C(A.rows, B.cols);
            gemm_acc(C, A, false, B, false);
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::add:
        case Op::sub:
        case Op::hadamard: {
            arity(2);
            const TensorValue &A = val(0), &B = val(1);
            if (!A.same_shape(B)) shape_error(op, A, B);
            TensorValue C(A.rows, A.cols);
            const size_t n = C.data.size();
            if (op == Op::add)
                for (size_t i = 0; i < n; ++i) C.data[i] = A.data[i] + B.data[i];
            else if (op == Op::sub)
                for (size_t i = 0; i < n; ++i) C.data[i] = A.data[i] - B.data[i];
            else
                for (size_t i = 0; i < n; ++i) C.data[i] = A.data[i] * B.data[i];
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::scale: {
            arity(2);
            const TensorValue &A = val(0), &S = val(1);
            if (!S.is_scalar()) shape_error(op, A, S);
            TensorValue C(A.rows, A.cols);
            const double s = S.data[0];
            for (size_t i = 0; i < C.data.size(); ++i) C.data[i] = A.data[i] * s;
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::concat_rows: {
            arity(2);
            const TensorValue &A = val(0), &B = val(1);
            if (A.cols != B.cols) shape_error(op, A, B);
            TensorValue C(A.rows + B.rows, A.cols);
            std::memcpy(C.data.data(), A.data.data(), A.data.size() * sizeof(double));
            std::memcpy(C.data.data() + A.data.size(), B.data.data(),
                        B.data.size() * sizeof(double));
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::slice: {
            arity(1);
            const TensorValue& A = val(0);
            if (attrs.row0 < 0 || attrs.col0 < 0 || attrs.nrows < 0 || attrs.ncols < 0 ||
                attrs.row0 + attrs.nrows > A.rows || attrs.col0 + attrs.ncols > A.cols)
                throw std::invalid_argument(std::string(op_name(op)) + ": bounds [" +
                                            std::to_string(attrs.row0) + "+" +
                                            std::to_string(attrs.nrows) + ", " +
                                            std::to_string(attrs.col0) + "+" +
                                            std::to_string(attrs.ncols) + "] exceed " +
                                            shape_str(A));
            TensorValue C(attrs.nrows, attrs.ncols);
            for (int i = 0; i < attrs.nrows; ++i)
                for (int j = 0; j < attrs.ncols; ++j)
                    C.at(i, j) = A.at(attrs.row0 + i, attrs.col0 + j);
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::transpose: {
            arity(1);
            return push(op, inputs, attrs, transposed(val(0)));
        }

        case Op::sum: {
            arity(1);
            double s = 0.0;
            for (double x : val(0).data) s += x;
            return push(op, inputs, attrs, TensorValue::scalar(s));
        }

        case Op::dot: {
            arity(2);
            const TensorValue &A = val(0), &B = val(1);
            if (!A.same_shape(B)) shape_error(op, A, B);
            return push(op, inputs, attrs, TensorValue::scalar(dot_flat(A, B)));
        }

        case Op::sqnorm: {
            arity(1);
            const TensorValue& A = val(0);
            return push(op, inputs, attrs, TensorValue::scalar(dot_flat(A, A)));
        }

        case Op::outer: {
            arity(2);
            const TensorValue &U = val(0), &V = val(1);
            if (U.cols != 1 || V.cols != 1) shape_error(op, U, V);
            TensorValue C(U.rows, V.rows);
            for (int i = 0; i < U.rows; ++i)
                for (int j = 0; j < V.rows; ++j) C.at(i, j) = U.data[i] * V.data[j];
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::silu:
        case Op::silu_prime: {
            arity(1);
            const TensorValue& A = val(0);
            TensorValue C(A.rows, A.cols);
            TensorValue sig(A.rows, A.cols);
            for (size_t i = 0; i < A.data.size(); ++i) {
                const double x = A.data[i];
                const double s = sigmoid(x);
                sig.data[i] = s;
                C.data[i] = op == Op::silu ? x * s : s * (1.0 + x * (1.0 - s));
            }
            const NodeId id = push(op, inputs, attrs, std::move(C));
            nodes_.back().aux = std::move(sig);
            return id;
        }

        case Op::reciprocal:
        case Op::sqrt_:
        case Op::relu:
        case Op::relu_indicator: {
            arity(1);
            const TensorValue& A = val(0);
            TensorValue C(A.rows, A.cols);
            for (size_t i = 0; i < A.data.size(); ++i) {
                const double x = A.data[i];
                switch (op) {
                    case Op::reciprocal: C.data[i] = 1.0 / x; break;
                    case Op::sqrt_: C.data[i] = std::sqrt(x); break;
                    case Op::relu: C.data[i] = x > 0.0 ? x : 0.0; break;
                    case Op::relu_indicator: C.data[i] = x > 0.0 ? 1.0 : 0.0; break;
                    default: break;
                }
            }
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::diag_from_vector: {
            arity(1);
            const TensorValue& V = val(0);
            if (V.cols != 1) shape_error(op, V);
            TensorValue C(V.rows, V.rows);
            for (int i = 0; i < V.rows; ++i) C.at(i, i) = V.data[i];
            return push(op, inputs, attrs, std::move(C));
        }

        case Op::identity_minus: {
            arity(1);
            const TensorValue& A = val(0);
            if (A.rows != A.cols) shape_error(op, A);
            TensorValue C(A.rows, A.cols);
            for (int i = 0; i < A.rows; ++i)
                for (int j = 0; j < A.cols; ++j) C.at(i, j) = (i == j ? 1.0 : 0.0) - A.at(i, j);
            return push(op, inputs, attrs, std::move(C));
        }
    }
    throw std::invalid_argument("apply: unknown primitive tag");
}

std::vector<TensorValue> Tape::backward(NodeId root) const {
    if (root < 0 || static_cast<size_t>(root) >= nodes_.size())
        throw std::invalid_argument("backward: root id out of range");
    if (nodes_[static_cast<size_t>(root)].value.size() != 1)
        throw std::invalid_argument("backward: root must be scalar-shaped");

    std::vector<TensorValue> adj(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i)
        adj[i] = TensorValue::zeros(nodes_[i].value.rows, nodes_[i].value.cols);
    adj[static_cast<size_t>(root)].data[0] = 1.0;

    // only nodes on a path to the root carry gradient
    std::vector<uint8_t> reached(nodes_.size(), 0);
    reached[static_cast<size_t>(root)] = 1;

    for (size_t idx = static_cast<size_t>(root) + 1; idx-- > 0;) {
        const TapeNode& n = nodes_[idx];
        if (!reached[idx] || n.op == Op::leaf) continue;
        for (uint8_t i = 0; i < n.n_in; ++i) reached[static_cast<size_t>(n.in[i])] = 1;
        const TensorValue& g = adj[idx];
        const NodeId ia = n.in[0];
        const NodeId ib = n.n_in > 1 ? n.in[1] : -1;
        const TensorValue& A = nodes_[static_cast<size_t>(ia)].value;
        TensorValue& dA = adj[static_cast<size_t>(ia)];

        switch (n.op) {
            case Op::matmul: {
                const TensorValue& B = nodes_[static_cast<size_t>(ib)].value;
                gemm_acc(dA, g, false, B, true);                       // dA += g * B^T
                gemm_acc(adj[static_cast<size_t>(ib)], A, true, g, false); // dB += A^T * g
                break;
            }
            case Op::add:
                add_scaled(dA, g);
                add_scaled(adj[static_cast<size_t>(ib)], g);
                break;
            case Op::sub:
                add_scaled(dA, g);
                add_scaled(adj[static_cast<size_t>(ib)], g, -1.0);
                break;
            case Op::hadamard: {
                const TensorValue& B = nodes_[static_cast<size_t>(ib)].value;
                TensorValue& dB = adj[static_cast<size_t>(ib)];
                for (size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += g.data[i] * B.data[i];
                    dB.data[i] += g.data[i] * A.data[i];
                }
                break;
            }
            case Op::scale: {
                const double s = nodes_[static_cast<size_t>(ib)].value.data[0];
                add_scaled(dA, g, s);
                adj[static_cast<size_t>(ib)].data[0] += dot_flat(g, A);
                break;
            }
            case Op::concat_rows: {
                TensorValue& dB = adj[static_cast<size_t>(ib)];
                for (size_t i = 0; i < dA.data.size(); ++i) dA.data[i] += g.data[i];
                for (size_t i = 0; i < dB.data.size(); ++i)
                    dB.data[i] += g.data[dA.data.size() + i];
                break;
            }
            case Op::slice: {
                for (int i = 0; i < n.attrs.nrows; ++i)
                    for (int j = 0; j < n.attrs.ncols; ++j)
                        dA.at(n.attrs.row0 + i, n.attrs.col0 + j) += g.at(i, j);
                break;
            }
            case Op::transpose: {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) dA.at(j, i) += g.at(i, j);
                break;
            }
            case Op::sum: {
                const double g0 = g.data[0];
                for (double& x : dA.data) x += g0;
                break;
            }
            case Op::dot: {
                const TensorValue& B = nodes_[static_cast<size_t>(ib)].value;
                const double g0 = g.data[0];
                add_scaled(dA, B, g0);
                add_scaled(adj[static_cast<size_t>(ib)], A, g0);
                break;
            }
            case Op::sqnorm: {
                add_scaled(dA, A, 2.0 * g.data[0]);
                break;
            }
            case Op::outer: {
                const TensorValue& B = nodes_[static_cast<size_t>(ib)].value;
                TensorValue& dB = adj[static_cast<size_t>(ib)];
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) {
                        dA.data[i] += g.at(i, j) * B.data[j];
                        dB.data[j] += g.at(i, j) * A.data[i];
                    }
                break;
            }
            case Op::reciprocal: {
                const TensorValue& y = n.value;
                for (size_t i = 0; i < g.data.size(); ++i)
                    dA.data[i] -= g.data[i] * y.data[i] * y.data[i];
                break;
            }
            case Op::sqrt_: {
                const TensorValue& y = n.value;
                for (size_t i = 0; i < g.data.size(); ++i)
                    dA.data[i] += g.data[i] * 0.5 / y.data[i];
                break;
            }
            case Op::relu: {
                for (size_t i = 0; i < g.data.size(); ++i)
                    if (A.data[i] > 0.0) dA.data[i] += g.data[i];
                break;
            }
            case Op::silu: {
                const TensorValue& sig = n.aux;
                for (size_t i = 0; i < g.data.size(); ++i) {
                    const double s = sig.data[i];
                    dA.data[i] += g.data[i] * (s * (1.0 + A.data[i] * (1.0 - s)));
                }
                break;
            }
            case Op::silu_prime: {
                const TensorValue& sig = n.aux;
                for (size_t i = 0; i < g.data.size(); ++i) {
                    const double s = sig.data[i];
                    dA.data[i] += g.data[i] * (s * (1.0 - s) * (2.0 + A.data[i] * (1.0 - 2.0 * s)));
                }
                break;
            }
            case Op::relu_indicator:
                break; // piecewise-constant: zero derivative
            case Op::diag_from_vector: {
                for (int i = 0; i < dA.rows; ++i) dA.data[i] += g.at(i, i);
                break;
            }
            case Op::identity_minus: {
                add_scaled(dA, g, -1.0);
                break;
            }
            case Op::leaf:
                break;
        }
    }
    return adj;
}

double finite_diff_check(const TensorFn& f, const TensorValue& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");

    auto eval = [&](const TensorValue& xv) {
        Tape t;
        const NodeId in = t.leaf(xv);
        const NodeId out = f(t, in);
        const TensorValue& v = t.value(out);
        if (v.size() != 1)
            throw std::invalid_argument("finite_diff_check: f must be scalar-valued");
        return v.data[0];
    };

    const double f0 = eval(x);
    if (!std::isfinite(f0)) throw std::runtime_error("finite_diff_check: f(x) is non-finite");

    Tape t;
    const NodeId in = t.leaf(x);
    const NodeId out = f(t, in);
    const auto adj = t.backward(out);
    const TensorValue& grad = adj[static_cast<size_t>(in)];

    double max_err = 0.0;
    TensorValue xp = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        xp.data[i] = orig + h;
        const double fp = eval(xp);
        xp.data[i] = orig - h;
        const double fm = eval(xp);
        xp.data[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(grad.data[i] - fd) / std::max(1.0, std::abs(fd));
        if (err > max_err) max_err = err;
    }
    return max_err;
}

} // namespace comlab
