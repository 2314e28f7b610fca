#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "comlab/models.hpp"
#include "comlab/rng.hpp"
#include "reference_model.hpp"

using namespace comlab;

namespace {

NetworkConfig make_cfg(int n_s, int n_c, int rank, int n_f = 0, int width = 250, int depth = 2) {
    NetworkConfig cfg;
    cfg.n_s = n_s;
    cfg.n_c = n_c;
    cfg.n_f = n_f;
    cfg.width = width;
    cfg.depth_hidden = depth;
    cfg.rank = rank;
    return cfg;
}

NetworkConfig tiny_cfg(int n_c = 1) { return make_cfg(2, n_c, 2, 0, 4, 2); }

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("parameter counts reproduce the reference table") {
    // six systems, both architectures
    CHECK(count_params(make_cfg(2, 1, 10), ModelKind::twin) == 12273);
    CHECK(count_params(make_cfg(4, 3, 10), ModelKind::twin) == 14277);
    CHECK(count_params(make_cfg(4, 2, 10), ModelKind::twin) == 14026);
    CHECK(count_params(make_cfg(8, 7, 20), ModelKind::twin) == 28305);
    CHECK(count_params(make_cfg(4, 2, 30), ModelKind::twin) == 34066);
    CHECK(count_params(make_cfg(2, 1, 10), ModelKind::twin) == 12273);

    CHECK(count_params(make_cfg(2, 1, 10), ModelKind::comet) == 189753);
    CHECK(count_params(make_cfg(4, 3, 10), ModelKind::comet) == 191257);
    CHECK(count_params(make_cfg(4, 2, 10), ModelKind::comet) == 191006);
    CHECK(count_params(make_cfg(8, 7, 20), ModelKind::comet) == 194265);
    CHECK(count_params(make_cfg(4, 2, 30), ModelKind::comet) == 191006);
    CHECK(count_params(make_cfg(2, 1, 10), ModelKind::comet) == 189753);
}

TEST_CASE("count_params matches the materialized arrays") {
    for (const auto kind : {ModelKind::twin, ModelKind::comet}) {
        const NetworkConfig cfg = make_cfg(4, 3, 10, 1, 50, 2);
        ModelParams p = init_params(cfg, kind, 7);
        int64_t total = 0;
        for (const auto& ref : param_refs(p)) total += ref.array->size();
        CHECK(total == count_params(cfg, kind));
    }
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(validate(make_cfg(2, 2, 1)), std::invalid_argument); // n_c == n_s
    CHECK_THROWS_AS(validate(make_cfg(2, 1, 0)), std::invalid_argument); // rank < 1
    CHECK_THROWS_AS(validate(make_cfg(2, 1, 10, 0, 4)), std::invalid_argument); // width < rank
    CHECK_NOTHROW(validate(make_cfg(2, 1, 4, 0, 4)));
}

TEST_CASE("zero parameters produce zero outputs") {
    const NetworkConfig cfg = tiny_cfg();
    ModelParams p = init_params(cfg, ModelKind::twin, 1);
    for (auto& ref : param_refs(p)) std::fill(ref.array->data.begin(), ref.array->data.end(), 0.0);

    Tape tape;
    const auto out = twin_forward(tape, std::get<TwinNetParams>(p), cfg, std::array{0.4, -0.2});
    for (double x : tape.value(out.sdot0).data) CHECK(x == 0.0);
    for (double x : tape.value(out.c).data) CHECK(x == 0.0);

    ModelParams pc = init_params(cfg, ModelKind::comet, 1);
    for (auto& ref : param_refs(pc)) std::fill(ref.array->data.begin(), ref.array->data.end(), 0.0);
    Tape tape2;
    const auto out2 = comet_forward(tape2, std::get<CometMlpParams>(pc), cfg, std::array{0.4, -0.2});
    for (double x : tape2.value(out2.sdot0).data) CHECK(x == 0.0);
    for (double x : tape2.value(out2.c).data) CHECK(x == 0.0);
}

TEST_CASE("hand-set tiny twin network matches scalar-by-scalar evaluation") {
    NetworkConfig cfg = make_cfg(2, 1, 1, 0, 2, 1);
    ModelParams pv = init_params(cfg, ModelKind::twin, 3);
    TwinNetParams& p = std::get<TwinNetParams>(pv);
    p.W_h0 = TensorValue::from_rows(2, 2, std::array{0.3, -0.1, 0.2, 0.5});
    p.b_h0 = TensorValue::from_rows(2, 1, std::array{0.05, -0.02});
    p.W_k0 = TensorValue::from_rows(2, 2, std::array{-0.4, 0.6, 0.1, -0.3});
    p.b_k0 = TensorValue::from_rows(2, 1, std::array{0.0, 0.07});
    p.hidden[0].S = TensorValue::from_rows(2, 1, std::array{0.9, -0.2});
    p.hidden[0].v = TensorValue::from_rows(1, 1, std::array{0.8});
    p.hidden[0].D = TensorValue::from_rows(2, 1, std::array{0.4, 0.7});
    p.W_hL1 = TensorValue::from_rows(2, 2, std::array{0.3, 0.3, -0.6, 0.2});
    p.b_hL1 = TensorValue::from_rows(2, 1, std::array{0.01, 0.02});
    p.W_kL1 = TensorValue::from_rows(1, 2, std::array{0.5, -0.5});
    p.b_kL1 = TensorValue::from_rows(1, 1, std::array{-0.3});

    const std::vector<double> input{0.7, -0.4};
    const auto expected = ref::twin_forward(p, input);

    Tape tape;
    const auto out = twin_forward(tape, p, cfg, input);
    for (int i = 0; i < 2; ++i)
        CHECK(tape.value(out.sdot0).data[size_t(i)] ==
              doctest::Approx(expected.sdot0[size_t(i)]).epsilon(1e-14));
    CHECK(tape.value(out.c).data[0] == doctest::Approx(expected.c[0]).epsilon(1e-14));
}

TEST_CASE("all-negative singular values reduce the derivative path to its output bias") {
    NetworkConfig cfg = tiny_cfg();
    ModelParams pv = init_params(cfg, ModelKind::twin, 11);
    TwinNetParams& p = std::get<TwinNetParams>(pv);
    for (auto& layer : p.hidden)
        for (double& x : layer.v.data) x = -std::abs(x) - 0.1;
    p.b_hL1 = TensorValue::from_rows(2, 1, std::array{0.33, -0.27});

    Tape tape;
    const auto out = twin_forward(tape, p, cfg, std::array{0.9, 0.1});
    CHECK(tape.value(out.sdot0).data[0] == 0.33);
    CHECK(tape.value(out.sdot0).data[1] == -0.27);

    // the constants path has no singular values and is unaffected
    Tape tape2;
    ModelParams pv2 = init_params(cfg, ModelKind::twin, 11);
    TwinNetParams& p2 = std::get<TwinNetParams>(pv2);
    p2.b_hL1 = p.b_hL1;
    const auto out_ref = twin_forward(tape2, p2, cfg, std::array{0.9, 0.1});
    CHECK(tape.value(out.c).bitwise_equal(tape2.value(out_ref.c)));
}

TEST_CASE("constants path is bitwise independent of v") {
    const NetworkConfig cfg = tiny_cfg();
    ModelParams pv = init_params(cfg, ModelKind::twin, 5);
    TwinNetParams p = std::get<TwinNetParams>(pv);

    Tape t1;
    const auto out1 = twin_forward(t1, p, cfg, std::array{0.2, 0.6});
    for (auto& layer : p.hidden)
        for (double& x : layer.v.data) x += 7.7;
    Tape t2;
    const auto out2 = twin_forward(t2, p, cfg, std::array{0.2, 0.6});
    CHECK(t1.value(out1.c).bitwise_equal(t2.value(out2.c)));
    CHECK_FALSE(t1.value(out1.sdot0).bitwise_equal(t2.value(out2.sdot0)));
}

TEST_CASE("rank equal to width with identity factors chains plain activations") {
    NetworkConfig cfg = make_cfg(2, 1, 3, 0, 3, 2);
    ModelParams pv = init_params(cfg, ModelKind::twin, 9);
    TwinNetParams& p = std::get<TwinNetParams>(pv);
    for (auto& layer : p.hidden) {
        layer.S = TensorValue::identity(3);
        layer.D = TensorValue::identity(3);
        layer.v = TensorValue::ones(3, 1);
    }

    Tape tape;
    const auto out = twin_forward(tape, p, cfg, std::array{0.5, -0.8});

    // oracle: boundary FCs with f applied depth_hidden extra times in between
    auto affine = [](const TensorValue& W, const TensorValue& b, const std::vector<double>& x) {
        std::vector<double> y(size_t(W.rows), 0.0);
        for (int i = 0; i < W.rows; ++i) {
            for (int j = 0; j < W.cols; ++j) y[size_t(i)] += W.at(i, j) * x[size_t(j)];
            y[size_t(i)] += b.data[size_t(i)];
        }
        return y;
    };
    std::vector<double> h = affine(p.W_h0, p.b_h0, {0.5, -0.8});
    for (double& x : h) x = ref::silu(x);
    for (int l = 0; l < 2; ++l)
        for (double& x : h) x = ref::silu(x);
    const auto expected = affine(p.W_hL1, p.b_hL1, h);
    for (int i = 0; i < 2; ++i)
        CHECK(tape.value(out.sdot0).data[size_t(i)] == doctest::Approx(expected[size_t(i)]).epsilon(1e-14));
}

TEST_CASE("comet forward matches the reference and splits its output") {
    NetworkConfig cfg = make_cfg(3, 2, 2, 0, 5, 2);
    ModelParams pv = init_params(cfg, ModelKind::comet, 13);
    const CometMlpParams& p = std::get<CometMlpParams>(pv);

    const std::vector<double> input{0.3, -0.9, 0.5};
    const auto expected = ref::comet_forward(p, input, cfg.n_s);
    Tape tape;
    const auto out = comet_forward(tape, p, cfg, input);
    for (int i = 0; i < cfg.n_s; ++i)
        CHECK(tape.value(out.sdot0).data[size_t(i)] ==
              doctest::Approx(expected.sdot0[size_t(i)]).epsilon(1e-13));
    for (int i = 0; i < cfg.n_c; ++i)
        CHECK(tape.value(out.c).data[size_t(i)] ==
              doctest::Approx(expected.c[size_t(i)]).epsilon(1e-13));
}

TEST_CASE("comet with no constants yields an empty constants vector") {
    NetworkConfig cfg = make_cfg(2, 0, 2, 0, 4, 2);
    ModelParams pv = init_params(cfg, ModelKind::comet, 17);
    Tape tape;
    const auto out = comet_forward(tape, std::get<CometMlpParams>(pv), cfg, std::array{0.1, 0.2});
    CHECK(tape.value(out.c).rows == 0);
    CHECK(tape.value(out.c).data.empty());
}

TEST_CASE("constants input gradient: zero weights give a zero jacobian") {
    const NetworkConfig cfg = tiny_cfg();
    ModelParams p = init_params(cfg, ModelKind::twin, 19);
    for (auto& ref : param_refs(p)) std::fill(ref.array->data.begin(), ref.array->data.end(), 0.0);
    Tape tape;
    const NodeId J = constants_input_gradient(tape, p, cfg, std::array{0.3, 0.4});
    for (double x : tape.value(J).data) CHECK(x == 0.0);
}

TEST_CASE("constants input gradient matches finite differences of c") {
    Rng rng(23);
    for (const auto kind : {ModelKind::twin, ModelKind::comet}) {
        const NetworkConfig cfg = make_cfg(3, 2, 2, 0, 6, 2);
        const ModelParams p = init_params(cfg, kind, 29);
        std::vector<double> s{0.4, -0.7, 0.2};

        Tape tape;
        const NodeId J = constants_input_gradient(tape, p, cfg, s);
        REQUIRE(tape.value(J).rows == 2);
        REQUIRE(tape.value(J).cols == 3);

        const double h = 1e-6;
        for (int i = 0; i < cfg.n_c; ++i) {
            for (int j = 0; j < cfg.n_s; ++j) {
                auto eval_c = [&](double delta) {
                    auto sj = s;
                    sj[size_t(j)] += delta;
                    Tape t;
                    const auto out = kind == ModelKind::twin
                                         ? twin_forward(t, std::get<TwinNetParams>(p), cfg, sj)
                                         : comet_forward(t, std::get<CometMlpParams>(p), cfg, sj);
                    return t.value(out.c).data[size_t(i)];
                };
                const double fd = (eval_c(h) - eval_c(-h)) / (2.0 * h);
                const double ad = tape.value(J).at(i, j);
                CHECK(std::abs(ad - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
            }
        }
    }
}

TEST_CASE("force columns are excluded from the jacobian") {
    const NetworkConfig cfg = make_cfg(2, 1, 2, 1, 5, 2);
    const ModelParams p = init_params(cfg, ModelKind::twin, 31);
    Tape tape;
    const NodeId J =
        constants_input_gradient(tape, p, cfg, std::array{0.4, 0.1}, std::array{0.25});
    CHECK(tape.value(J).rows == 1);
    CHECK(tape.value(J).cols == 2); // state columns only
}

TEST_CASE("initialization is deterministic and well-scaled") {
    const NetworkConfig cfg = make_cfg(4, 2, 10, 0, 250, 2);
    const ModelParams a = init_params(cfg, ModelKind::twin, 42);
    const ModelParams b = init_params(cfg, ModelKind::twin, 42);
    ModelParams a_mut = a, b_mut = b;
    const auto refs_a = param_refs(a_mut);
    const auto refs_b = param_refs(b_mut);
    for (size_t i = 0; i < refs_a.size(); ++i)
        CHECK(refs_a[i].array->bitwise_equal(*refs_b[i].array));

    const TwinNetParams& p = std::get<TwinNetParams>(a);
    for (const auto& layer : p.hidden) {
        TensorValue gram(cfg.rank, cfg.rank);
        gemm_acc(gram, layer.S, true, layer.S, false);
        for (int i = 0; i < cfg.rank; ++i) gram.at(i, i) -= 1.0;
        CHECK(frobenius_norm(gram) <= 1e-12);
        for (double x : layer.v.data) {
            CHECK(x > 0.5);
            CHECK(x < 1.5);
        }
    }
    const double bound = 1.0 / std::sqrt(250.0);
    for (double x : p.W_hL1.data) {
        CHECK(x > -bound);
        CHECK(x < bound);
    }
    for (double x : p.b_h0.data) CHECK(x == 0.0);
}

TEST_CASE("phase-2 reinitialization keeps the factors and redraws the rest") {
    const NetworkConfig cfg = make_cfg(4, 2, 5, 0, 16, 2);
    ModelParams pv = init_params(cfg, ModelKind::twin, 77);
    TwinNetParams p = std::get<TwinNetParams>(pv);
    const TwinNetParams before = p;

    reinit_for_phase2(p, cfg, 78);
    CHECK(p.factors_frozen);
    for (size_t l = 0; l < p.hidden.size(); ++l) {
        CHECK(p.hidden[l].S.bitwise_equal(before.hidden[l].S));
        CHECK(p.hidden[l].D.bitwise_equal(before.hidden[l].D));
        CHECK_FALSE(p.hidden[l].v.bitwise_equal(before.hidden[l].v));
        for (double x : p.hidden[l].v.data) {
            CHECK(x > 0.5);
            CHECK(x < 1.5);
        }
    }
    CHECK_FALSE(p.W_h0.bitwise_equal(before.W_h0));
    CHECK_FALSE(p.W_kL1.bitwise_equal(before.W_kL1));

    // frozen flags: exactly the S and D factors
    for (const auto& ref : param_refs(p)) {
        const bool is_factor = ref.name.find(".S") != std::string::npos ||
                               ref.name.find(".D") != std::string::npos;
        CHECK(ref.trainable == !is_factor);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    const NetworkConfig cfg = make_cfg(4, 2, 5, 1, 12, 2);
    for (const auto kind : {ModelKind::twin, ModelKind::comet}) {
        ModelParams p = init_params(cfg, kind, 101);
        const std::string path = temp_path("comlab_ckpt_test.ckpt");
        save_checkpoint(p, cfg, path);
        auto [loaded, loaded_cfg] = load_checkpoint(path);
        CHECK(loaded_cfg.n_s == cfg.n_s);
        CHECK(loaded_cfg.n_c == cfg.n_c);
        CHECK(loaded_cfg.n_f == cfg.n_f);
        CHECK(loaded_cfg.rank == cfg.rank);
        CHECK(kind_of(loaded) == kind);
        auto refs_a = param_refs(p);
        auto refs_b = param_refs(loaded);
        REQUIRE(refs_a.size() == refs_b.size());
        for (size_t i = 0; i < refs_a.size(); ++i)
            CHECK(refs_a[i].array->bitwise_equal(*refs_b[i].array));
        std::filesystem::remove(path);
    }
}

TEST_CASE("truncated checkpoint is rejected") {
    const NetworkConfig cfg = tiny_cfg();
    const ModelParams p = init_params(cfg, ModelKind::twin, 5);
    const std::string path = temp_path("comlab_ckpt_trunc.ckpt");
    save_checkpoint(p, cfg, path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 64);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint header and array shape disagreement is rejected") {
    const NetworkConfig cfg = tiny_cfg();
    const ModelParams p = init_params(cfg, ModelKind::twin, 5);
    const std::string path = temp_path("comlab_ckpt_mismatch.ckpt");
    save_checkpoint(p, cfg, path);

    std::ifstream in(path, std::ios::binary);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    // corrupt the declared width, leaving the arrays alone
    const auto pos = contents.find("width 4");
    REQUIRE(pos != std::string::npos);
    contents.replace(pos, 7, "width 5");
    std::ofstream out(path, std::ios::binary);
    out << contents;
    out.close();

    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("shape"), std::runtime_error);
    std::filesystem::remove(path);
}
