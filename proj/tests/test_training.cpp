#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "comlab/evaluation.hpp"
#include "comlab/systems.hpp"
#include "comlab/training.hpp"

using namespace comlab;

namespace {

TrainConfig small_train(int e1, int e2) {
    TrainConfig cfg;
    cfg.epochs_phase1 = e1;
    cfg.epochs_phase2 = e2;
    cfg.batch_size = 256;
    return cfg;
}

NetworkConfig small_net(int n_s, int n_c, int width = 32, int rank = 4) {
    NetworkConfig net;
    net.n_s = n_s;
    net.n_c = n_c;
    net.width = width;
    net.rank = rank;
    return net;
}

bool bitwise_equal_params(ModelParams a, ModelParams b) {
    const auto ra = param_refs(a);
    const auto rb = param_refs(b);
    if (ra.size() != rb.size()) return false;
    for (size_t i = 0; i < ra.size(); ++i)
        if (!ra[i].array->bitwise_equal(*rb[i].array)) return false;
    return true;
}

} // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 1000, 1e-3, 1e-5) == 1e-3);
    CHECK(cosine_lr(999, 1000, 1e-3, 1e-5) == 1e-5);
    CHECK(cosine_lr(500, 1001, 1e-3, 1e-5) == doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-12));
    CHECK(cosine_lr(0, 1, 1e-3, 1e-5) == 1e-3); // degenerate schedule
    CHECK(cosine_lr(0, 0, 1e-3, 1e-5) == 1e-3);
}

TEST_CASE("adam: zero gradients leave parameters untouched") {
    const NetworkConfig net = small_net(2, 1, 8, 2);
    ModelParams p = init_params(net, ModelKind::twin, 1);
    const ModelParams before = p;
    AdamOptimizer opt(p, 0.9, 0.999, 1e-8);

    std::vector<TensorValue> zeros;
    for (const auto& ref : param_refs(p)) zeros.push_back(TensorValue::zeros(ref.array->rows, ref.array->cols));
    std::vector<const TensorValue*> grads;
    for (const auto& z : zeros) grads.push_back(&z);
    opt.step(p, grads, 1e-3);
    CHECK(bitwise_equal_params(p, before));
}

TEST_CASE("adam first step moves a scalar by about the learning rate") {
    // one trainable scalar: model it with a 1-element parameter array
    NetworkConfig net = small_net(2, 1, 2, 1);
    ModelParams p = init_params(net, ModelKind::twin, 2);
    AdamOptimizer opt(p, 0.9, 0.999, 1e-8);

    auto refs = param_refs(p);
    std::vector<TensorValue> grads_storage;
    for (const auto& ref : refs) grads_storage.push_back(TensorValue::zeros(ref.array->rows, ref.array->cols));
    // constant unit gradient on the first weight entry
    grads_storage[0].data[0] = 1.0;
    std::vector<const TensorValue*> grads;
    for (const auto& g : grads_storage) grads.push_back(&g);

    const double theta0 = refs[0].array->data[0];
    opt.step(p, grads, 1e-3);
    const double delta = param_refs(p)[0].array->data[0] - theta0;
    // first-step update is lr * g / (|g| + eps) after bias correction
    CHECK(delta == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam never touches frozen factors") {
    const NetworkConfig net = small_net(2, 1, 8, 2);
    ModelParams pv = init_params(net, ModelKind::twin, 3);
    TwinNetParams p = std::get<TwinNetParams>(pv);
    reinit_for_phase2(p, net, 4);
    ModelParams frozen = std::move(p);
    const auto S_before = std::get<TwinNetParams>(frozen).hidden[0].S;

    AdamOptimizer opt(frozen, 0.9, 0.999, 1e-8);
    std::vector<TensorValue> grads_storage;
    for (const auto& ref : param_refs(frozen)) {
        TensorValue g(ref.array->rows, ref.array->cols);
        for (double& x : g.data) x = 0.5;
        grads_storage.push_back(std::move(g));
    }
    std::vector<const TensorValue*> grads;
    for (const auto& g : grads_storage) grads.push_back(&g);
    for (int step = 0; step < 25; ++step) opt.step(frozen, grads, 1e-2);

    CHECK(std::get<TwinNetParams>(frozen).hidden[0].S.bitwise_equal(S_before));
    // everything trainable moved
    CHECK_FALSE(std::get<TwinNetParams>(frozen).W_h0.data[0] ==
                doctest::Approx(0.0).epsilon(0));
}

TEST_CASE("adam rejects non-finite gradients by name") {
    const NetworkConfig net = small_net(2, 1, 8, 2);
    ModelParams p = init_params(net, ModelKind::twin, 5);
    AdamOptimizer opt(p, 0.9, 0.999, 1e-8);
    std::vector<TensorValue> grads_storage;
    for (const auto& ref : param_refs(p))
        grads_storage.push_back(TensorValue::zeros(ref.array->rows, ref.array->cols));
    grads_storage[2].data[1] = std::numeric_limits<double>::quiet_NaN(); // W_k0
    std::vector<const TensorValue*> grads;
    for (const auto& g : grads_storage) grads.push_back(&g);
    CHECK_THROWS_WITH_AS(opt.step(p, grads, 1e-3), doctest::Contains("W_k0"),
                         std::runtime_error);
}

TEST_CASE("early stopping triggers exactly patience epochs past the best") {
    EarlyStopper stopper(3);
    CHECK_FALSE(stopper.update(1.0, 0));
    CHECK_FALSE(stopper.update(0.9, 1)); // best
    CHECK_FALSE(stopper.update(0.95, 2));
    CHECK_FALSE(stopper.update(0.95, 3));
    CHECK(stopper.update(0.95, 4)); // third epoch without improvement
    CHECK(stopper.best_epoch() == 1);
    CHECK(stopper.best() == 0.9);

    EarlyStopper disabled(std::nullopt);
    for (int e = 0; e < 500; ++e) CHECK_FALSE(disabled.update(1.0, e));
}

TEST_CASE("validation split is disjoint, complete, and seed-stable") {
    const DataSplit a = split_dataset(100, 0.2, 9);
    const DataSplit b = split_dataset(100, 0.2, 9);
    const DataSplit c = split_dataset(100, 0.2, 10);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.val.size() == 20);
    CHECK(a.train.size() == 80);
    CHECK_FALSE(a.val == c.val);

    std::vector<bool> seen(100, false);
    for (size_t i : a.train) seen[i] = true;
    for (size_t i : a.val) {
        CHECK_FALSE(seen[i]); // disjoint
        seen[i] = true;
    }
    for (bool s : seen) CHECK(s); // complete
}

TEST_CASE("first-phase training drives the factors semi-orthogonal") {
    const SystemDef& sys = get_system("mass-spring");
    const Dataset ds = generate_dataset(sys, 10, 10.0, 50, 0.05, 21);
    const NetworkConfig net = small_net(2, 1, 32, 4);
    const TrainConfig cfg = small_train(120, 0);

    const TrainResult res = train_phase1(cfg, net, ds, 31);
    const TwinNetParams& p = std::get<TwinNetParams>(res.params);
    for (const auto& layer : p.hidden) {
        TensorValue gram_s(net.rank, net.rank), gram_d(net.rank, net.rank);
        gemm_acc(gram_s, layer.S, true, layer.S, false);
        gemm_acc(gram_d, layer.D, true, layer.D, false);
        for (int i = 0; i < net.rank; ++i) {
            gram_s.at(i, i) -= 1.0;
            gram_d.at(i, i) -= 1.0;
        }
        CHECK(frobenius_norm(gram_s) <= 1e-2);
        CHECK(frobenius_norm(gram_d) <= 1e-2);
    }
    CHECK(res.history.size() == 120);
    CHECK(std::isfinite(res.history.back().train_loss));
}

TEST_CASE("first-phase training is bitwise deterministic") {
    const SystemDef& sys = get_system("mass-spring");
    const Dataset ds = generate_dataset(sys, 5, 10.0, 40, 0.05, 22);
    const NetworkConfig net = small_net(2, 1, 16, 4);
    const TrainConfig cfg = small_train(15, 0);

    const TrainResult a = train_phase1(cfg, net, ds, 33);
    const TrainResult b = train_phase1(cfg, net, ds, 33);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i)
        CHECK(std::memcmp(&a.history[i].train_loss, &b.history[i].train_loss, sizeof(double)) == 0);
    CHECK(bitwise_equal_params(a.params, b.params));
}

TEST_CASE("first-phase loss with no constants is the penalty alone and stays tiny") {
    const SystemDef& sys = get_system("mass-spring");
    const Dataset ds = generate_dataset(sys, 5, 10.0, 40, 0.05, 23);
    const NetworkConfig net = small_net(2, 0, 16, 4);
    const TrainConfig cfg = small_train(40, 0);
    const TrainResult res = train_phase1(cfg, net, ds, 35);
    CHECK(res.history.back().train_loss <= 1e-6);
}

TEST_CASE("second phase freezes the factors and improves the fit") {
    const SystemDef& sys = get_system("mass-spring");
    const Dataset ds = generate_dataset(sys, 20, 10.0, 100, 0.0, 24);
    const NetworkConfig net = small_net(2, 1, 64, 6);
    TrainConfig cfg = small_train(60, 200);
    cfg.batch_size = 512;

    const TrainResult p1 = train_phase1(cfg, net, ds, 41);
    const TwinNetParams& after1 = std::get<TwinNetParams>(p1.params);

    // hash the factors before and after every epoch of the second phase
    std::vector<TensorValue> factors;
    for (const auto& layer : after1.hidden) {
        factors.push_back(layer.S);
        factors.push_back(layer.D);
    }
    int observed_epochs = 0;
    const EpochObserver observer = [&](int, const ModelParams& params) {
        const auto& tp = std::get<TwinNetParams>(params);
        size_t idx = 0;
        for (const auto& layer : tp.hidden) {
            REQUIRE(layer.S.bitwise_equal(factors[idx++]));
            REQUIRE(layer.D.bitwise_equal(factors[idx++]));
        }
        ++observed_epochs;
    };

    const TrainResult p2 = train_phase2(cfg, net, after1, ds, 41, observer);
    CHECK(observed_epochs == int(p2.history.size()));

    const TwinNetParams& after2 = std::get<TwinNetParams>(p2.params);
    for (size_t l = 0; l < after2.hidden.size(); ++l) {
        CHECK(after2.hidden[l].S.bitwise_equal(after1.hidden[l].S));
        CHECK(after2.hidden[l].D.bitwise_equal(after1.hidden[l].D));
    }

    // smoke fit: noise-free mass-spring must shrink the loss at least 10x
    CHECK(p2.history.back().train_loss < p2.history.front().train_loss / 10.0);
    CHECK(p2.best_epoch >= 0);
}

TEST_CASE("baseline training is deterministic and fits the smoke dataset") {
    const SystemDef& sys = get_system("mass-spring");
    const Dataset ds = generate_dataset(sys, 10, 10.0, 100, 0.0, 25);
    NetworkConfig net = small_net(2, 1, 32, 4);
    TrainConfig cfg = small_train(150, 0);

    const TrainResult a = train_comet(cfg, net, ds, 51);
    const TrainResult b = train_comet(cfg, net, ds, 51);
    CHECK(bitwise_equal_params(a.params, b.params));
    CHECK(a.history.back().train_loss < a.history.front().train_loss / 10.0);

    ModelParams p = a.params;
    int64_t total = 0;
    for (const auto& ref : param_refs(p)) total += ref.array->size();
    CHECK(total == count_params(net, ModelKind::comet));
}

TEST_CASE("training rejects mismatched dataset dimensions") {
    const SystemDef& sys = get_system("2d-pendulum");
    const Dataset ds = generate_dataset(sys, 2, 5.0, 20, 0.0, 26);
    const NetworkConfig net = small_net(2, 1, 8, 2); // n_s = 2 vs dataset 4
    CHECK_THROWS_AS(train_phase1(small_train(1, 0), net, ds, 1), std::invalid_argument);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.lr_min = 1.0;
    cfg.lr_max = 0.5;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.patience = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.val_fraction = 1.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
}
