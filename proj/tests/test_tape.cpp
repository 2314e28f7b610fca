#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "comlab/rng.hpp"
#include "comlab/tape.hpp"

using namespace comlab;

namespace {

TensorValue random_tensor(Rng& rng, int rows, int cols, double lo = -2.0, double hi = 2.0) {
    TensorValue t(rows, cols);
    for (double& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

// keeps elementwise inputs away from kinks / singularities
TensorValue random_positive(Rng& rng, int rows, int cols) {
    TensorValue t(rows, cols);
    for (double& x : t.data) x = rng.uniform(0.5, 2.0);
    return t;
}

} // namespace

TEST_CASE("matmul shape rule and mismatch error") {
    Tape tape;
    Rng rng(1);
    const NodeId a = tape.leaf(random_tensor(rng, 2, 3));
    const NodeId b = tape.leaf(random_tensor(rng, 3, 1));
    const NodeId c = tape.apply(Op::matmul, a, b);
    CHECK(tape.value(c).rows == 2);
    CHECK(tape.value(c).cols == 1);

    const NodeId bad = tape.leaf(random_tensor(rng, 4, 1));
    CHECK_THROWS_WITH_AS(tape.apply(Op::matmul, a, bad),
                         "matmul: shapes 2x3 and 4x1 do not conform", std::invalid_argument);
}

TEST_CASE("silu values at zero") {
    Tape tape;
    const NodeId x = tape.leaf(TensorValue::scalar(0.0));
    CHECK(tape.value(tape.apply(Op::silu, x)).data[0] == 0.0);

    // central difference of silu at 0 with h = 1e-6
    const double h = 1e-6;
    const double fd = (silu_scalar(h) - silu_scalar(-h)) / (2.0 * h);
    const double sp = tape.value(tape.apply(Op::silu_prime, x)).data[0];
    CHECK(sp == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sp == doctest::Approx(fd).epsilon(1e-9));
}

TEST_CASE("backward of sqnorm and dot") {
    Tape tape;
    const NodeId x = tape.leaf(TensorValue::from_rows(2, 1, std::array{3.0, 4.0}));
    const NodeId root = tape.apply(Op::sqnorm, x);
    const auto adj = tape.backward(root);
    CHECK(adj[size_t(x)].data[0] == doctest::Approx(6.0));
    CHECK(adj[size_t(x)].data[1] == doctest::Approx(8.0));

    Tape tape2;
    const NodeId a = tape2.leaf(TensorValue::from_rows(2, 1, std::array{1.0, 2.0}));
    const NodeId b = tape2.leaf(TensorValue::from_rows(2, 1, std::array{3.0, 4.0}));
    const auto adj2 = tape2.backward(tape2.apply(Op::dot, a, b));
    CHECK(adj2[size_t(a)].data[0] == doctest::Approx(3.0));
    CHECK(adj2[size_t(a)].data[1] == doctest::Approx(4.0));
    CHECK(adj2[size_t(b)].data[0] == doctest::Approx(1.0));
    CHECK(adj2[size_t(b)].data[1] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar root") {
    Tape tape;
    Rng rng(2);
    const NodeId x = tape.leaf(random_tensor(rng, 3, 1));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("three-layer composite matches finite differences") {
    Rng rng(7);
    const TensorValue W1 = random_tensor(rng, 4, 3);
    const TensorValue W2 = random_tensor(rng, 4, 4);
    const TensorValue W3 = random_tensor(rng, 1, 4);
    const TensorFn f = [&](Tape& t, NodeId x) {
        NodeId h = t.apply(Op::silu, t.apply(Op::matmul, t.leaf(W1), x));
        h = t.apply(Op::silu, t.apply(Op::matmul, t.leaf(W2), h));
        return t.apply(Op::sqnorm, t.apply(Op::matmul, t.leaf(W3), h));
    };
    for (int trial = 0; trial < 5; ++trial) {
        const TensorValue x = random_tensor(rng, 3, 1);
        CHECK(finite_diff_check(f, x, 1e-6) <= 1e-5);
    }
}

TEST_CASE("finite_diff_check on closed forms") {
    Rng rng(11);
    const TensorValue x = random_tensor(rng, 10, 1);
    const TensorFn sum_sq = [](Tape& t, NodeId in) { return t.apply(Op::sqnorm, in); };
    CHECK(finite_diff_check(sum_sq, x, 1e-6) <= 1e-7);

    // constant function: gradient must be exactly zero
    const TensorFn constant = [](Tape& t, NodeId in) {
        (void)in;
        return t.leaf(TensorValue::scalar(4.2));
    };
    Tape tape;
    const NodeId in = tape.leaf(x);
    const NodeId root = constant(tape, in);
    const auto adj = tape.backward(root);
    for (double g : adj[size_t(in)].data) CHECK(g == 0.0);
}

TEST_CASE("tape replay is bit-identical") {
    auto build = [](Tape& tape) {
        Rng rng(99);
        const NodeId a = tape.leaf(random_tensor(rng, 5, 4));
        const NodeId b = tape.leaf(random_tensor(rng, 4, 2));
        const NodeId c = tape.apply(Op::matmul, a, b);
        const NodeId d = tape.apply(Op::silu, c);
        return tape.apply(Op::sqnorm, d);
    };
    Tape t1, t2;
    const NodeId r1 = build(t1);
    const NodeId r2 = build(t2);
    REQUIRE(t1.size() == t2.size());
    CHECK(t1.value(r1).bitwise_equal(t2.value(r2)));
    for (size_t i = 0; i < t1.size(); ++i)
        CHECK(t1.value(NodeId(i)).bitwise_equal(t2.value(NodeId(i))));
}

TEST_CASE("every primitive's backward agrees with central finite differences") {
    Rng rng(123);
    const double h = 1e-6;
    const double tol = 1e-5;

    auto check_unary = [&](Op op, bool positive_domain) {
        for (int trial = 0; trial < 20; ++trial) {
            const TensorValue x = positive_domain ? random_positive(rng, 3, 2)
                                                  : random_tensor(rng, 3, 2);
            // keep relu-family inputs away from the kink at zero
            bool near_kink = false;
            if (op == Op::relu || op == Op::relu_indicator)
                for (double v : x.data) near_kink |= std::abs(v) < 0.05;
            if (near_kink) continue;
            const TensorFn f = [&](Tape& t, NodeId in) {
                return t.apply(Op::sum, t.apply(op, in));
            };
            CAPTURE(op_name(op));
            CHECK(finite_diff_check(f, x, h) <= tol);
        }
    };
    check_unary(Op::reciprocal, true);
    check_unary(Op::sqrt_, true);
    check_unary(Op::relu, false);
    check_unary(Op::silu, false);
    check_unary(Op::silu_prime, false);
    check_unary(Op::relu_indicator, false);
    check_unary(Op::transpose, false);
    check_unary(Op::sum, false);
    check_unary(Op::sqnorm, false);

    // square / vector-specific primitives
    for (int trial = 0; trial < 20; ++trial) {
        const TensorValue sq = random_tensor(rng, 3, 3);
        const TensorFn f_im = [](Tape& t, NodeId in) {
            return t.apply(Op::sum, t.apply(Op::identity_minus, in));
        };
        CHECK(finite_diff_check(f_im, sq, h) <= tol);

        const TensorValue vec = random_tensor(rng, 4, 1);
        const TensorFn f_diag = [](Tape& t, NodeId in) {
            return t.apply(Op::sqnorm, t.apply(Op::diag_from_vector, in));
        };
        CHECK(finite_diff_check(f_diag, vec, h) <= tol);
    }

    // binary primitives: differentiate with respect to a packed input
    for (int trial = 0; trial < 20; ++trial) {
        const TensorValue packed = random_tensor(rng, 12, 1);
        auto split = [](Tape& t, NodeId in, int rows_a, int cols_a, int rows_b, int cols_b) {
            // reinterpret halves of the packed vector via slices + transpose tricks
            const NodeId a_flat = t.apply_slice(in, 0, rows_a * cols_a, 0, 1);
            const NodeId b_flat = t.apply_slice(in, rows_a * cols_a, rows_b * cols_b, 0, 1);
            return std::pair{a_flat, b_flat};
        };
        const TensorFn f_matmul = [&](Tape& t, NodeId in) {
            auto [a_flat, b_flat] = split(t, in, 2, 3, 3, 2);
            // assemble 2x3 and 3x2 from row slices
            NodeId a = t.apply(Op::transpose, a_flat); // 1x6
            NodeId a_rows0 = t.apply_slice(a, 0, 1, 0, 3);
            NodeId a_rows1 = t.apply_slice(a, 0, 1, 3, 3);
            a = t.apply(Op::concat_rows, a_rows0, a_rows1); // 2x3
            NodeId b = t.apply(Op::transpose, b_flat);
            NodeId b_rows0 = t.apply_slice(b, 0, 1, 0, 2);
            NodeId b_rows1 = t.apply_slice(b, 0, 1, 2, 2);
            NodeId b_rows2 = t.apply_slice(b, 0, 1, 4, 2);
            b = t.apply(Op::concat_rows, t.apply(Op::concat_rows, b_rows0, b_rows1), b_rows2);
            return t.apply(Op::sqnorm, t.apply(Op::matmul, a, b));
        };
        CHECK(finite_diff_check(f_matmul, packed, h) <= tol);

        const TensorFn f_elementwise = [&](Tape& t, NodeId in) {
            auto [a, b] = split(t, in, 6, 1, 6, 1);
            const NodeId sum = t.apply(Op::add, a, b);
            const NodeId diff = t.apply(Op::sub, a, b);
            const NodeId prod = t.apply(Op::hadamard, sum, diff);
            const NodeId dotv = t.apply(Op::dot, prod, a);
            const NodeId outerv = t.apply(Op::outer, a, b);
            const NodeId scaled = t.apply(Op::scale, outerv, dotv);
            const NodeId cat = t.apply(Op::concat_rows, scaled, outerv);
            return t.apply(Op::sqnorm, cat);
        };
        CHECK(finite_diff_check(f_elementwise, packed, h) <= tol);
    }
}

TEST_CASE("silu_prime backward carries the second derivative") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const TensorValue x = random_tensor(rng, 5, 1);
        const TensorFn f = [](Tape& t, NodeId in) {
            return t.apply(Op::sum, t.apply(Op::silu_prime, in));
        };
        CHECK(finite_diff_check(f, x, 1e-6) <= 1e-4);
    }
}

TEST_CASE("relu_indicator convention at zero") {
    Tape tape;
    const NodeId x = tape.leaf(TensorValue::from_rows(3, 1, std::array{-1.0, 0.0, 2.0}));
    const TensorValue& y = tape.value(tape.apply(Op::relu_indicator, x));
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == 0.0); // derivative 0 at the kink
    CHECK(y.data[2] == 1.0);
}

TEST_CASE("scale by a scalar node propagates to both inputs") {
    Rng rng(17);
    const TensorValue xv = random_tensor(rng, 3, 2);
    const TensorFn f = [&](Tape& t, NodeId in) {
        const NodeId s = t.apply(Op::sqnorm, in); // scalar derived from x
        return t.apply(Op::sum, t.apply(Op::scale, in, s));
    };
    CHECK(finite_diff_check(f, xv, 1e-6) <= 1e-5);
}

TEST_CASE("unknown arity and leaf misuse are rejected") {
    Tape tape;
    Rng rng(3);
    const NodeId a = tape.leaf(random_tensor(rng, 2, 2));
    CHECK_THROWS_AS(tape.apply(Op::matmul, a), std::invalid_argument);
    CHECK_THROWS_AS(tape.apply(Op::leaf, a), std::invalid_argument);
    CHECK_THROWS_AS(tape.apply_slice(a, 1, 3, 0, 1), std::invalid_argument);
}
