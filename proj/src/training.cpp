#include "comlab/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace comlab {

void validate(const TrainConfig& cfg) {
    if (cfg.lr_min > cfg.lr_max) throw std::invalid_argument("train config: lr_min > lr_max");
    if (cfg.patience && *cfg.patience < 1)
        throw std::invalid_argument("train config: patience must be >= 1");
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
        throw std::invalid_argument("train config: val_fraction must be in (0, 1)");
    if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (cfg.epochs_phase1 < 0 || cfg.epochs_phase2 < 0)
        throw std::invalid_argument("train config: epoch counts must be >= 0");
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
    if (total_epochs < 2) return lr_max;
    if (epoch < 0 || epoch >= total_epochs)
        throw std::invalid_argument("cosine_lr: epoch out of range");
    const double phase = M_PI * epoch / (total_epochs - 1);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

AdamOptimizer::AdamOptimizer(ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& ref : param_refs(params)) {
        Slot slot;
        slot.trainable = ref.trainable;
        if (ref.trainable) {
            slot.m = TensorValue::zeros(ref.array->rows, ref.array->cols);
            slot.v = TensorValue::zeros(ref.array->rows, ref.array->cols);
        }
        slots_.push_back(std::move(slot));
    }
}

void AdamOptimizer::step(ModelParams& params, const std::vector<const TensorValue*>& grads,
                         double lr) {
    auto refs = param_refs(params);
    if (refs.size() != slots_.size() || grads.size() != slots_.size())
        throw std::invalid_argument("adam: gradient list does not match parameter layout");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < slots_.size(); ++i) {
        Slot& slot = slots_[i];
        if (!slot.trainable) continue;
        const TensorValue& g = *grads[i];
        TensorValue& theta = *refs[i].array;
        if (!g.same_shape(theta))
            throw std::invalid_argument("adam: gradient shape mismatch for " + refs[i].name);
        for (size_t j = 0; j < theta.data.size(); ++j) {
            const double gj = g.data[j];
            if (!std::isfinite(gj))
                throw std::runtime_error("adam: non-finite gradient for parameter " + refs[i].name);
            slot.m.data[j] = beta1_ * slot.m.data[j] + (1.0 - beta1_) * gj;
            slot.v.data[j] = beta2_ * slot.v.data[j] + (1.0 - beta2_) * gj * gj;
            const double m_hat = slot.m.data[j] / bc1;
            const double v_hat = slot.v.data[j] / bc2;
            theta.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

bool EarlyStopper::update(double val_loss, int epoch) {
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch;
        since_best_ = 0;
        return false;
    }
    ++since_best_;
    return patience_ && since_best_ >= *patience_;
}

DataSplit split_dataset(size_t n_samples, double val_fraction, uint64_t seed) {
    if (n_samples < 2) throw std::invalid_argument("split_dataset: need at least 2 samples");
    std::vector<size_t> idx(n_samples);
    for (size_t i = 0; i < n_samples; ++i) idx[i] = i;
    Rng rng(mix_seed(seed, "split"));
    rng.shuffle(idx);
    size_t n_val = static_cast<size_t>(std::floor(val_fraction * static_cast<double>(n_samples)));
    n_val = std::max<size_t>(1, std::min(n_val, n_samples - 1));
    DataSplit split;
    split.val.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(n_val));
    split.train.assign(idx.begin() + static_cast<ptrdiff_t>(n_val), idx.end());
    return split;
}

namespace {

void check_dataset(const Dataset& data, const NetworkConfig& net) {
    if (data.samples.empty()) throw std::invalid_argument("training: dataset is empty");
    if (data.n_s != net.n_s || data.n_f != net.n_f)
        throw std::invalid_argument("training: dataset dimensions (n_s=" +
                                    std::to_string(data.n_s) + ", n_f=" + std::to_string(data.n_f) +
                                    ") do not match network config (n_s=" +
                                    std::to_string(net.n_s) + ", n_f=" + std::to_string(net.n_f) +
                                    ")");
}

std::vector<Sample> gather(const Dataset& data, const std::vector<size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(data.samples[i]);
    return out;
}

std::vector<NodeId> binding_leaf_ids(const TwinBinding& b) {
    std::vector<NodeId> ids = {b.W_h0, b.b_h0, b.W_k0, b.b_k0};
    for (const auto& h : b.hidden) {
        ids.push_back(h.S);
        ids.push_back(h.v);
        ids.push_back(h.D);
    }
    ids.push_back(b.W_hL1);
    ids.push_back(b.b_hL1);
    ids.push_back(b.W_kL1);
    ids.push_back(b.b_kL1);
    return ids;
}

std::vector<NodeId> binding_leaf_ids(const CometBinding& b) {
    std::vector<NodeId> ids;
    for (size_t i = 0; i < b.W.size(); ++i) {
        ids.push_back(b.W[i]);
        ids.push_back(b.b[i]);
    }
    return ids;
}

// One epoch of minibatch optimization; samples are shuffled in place and the
// loss builder is invoked per contiguous batch. Returns the sample-weighted
// mean training loss.
template <typename LossBuilder>
double run_epoch(std::vector<Sample>& samples, int batch_size, Rng& shuffle_rng,
                 ModelParams& params, AdamOptimizer& opt, double lr, int epoch,
                 const LossBuilder& build_loss) {
    shuffle_rng.shuffle(samples);
    double total = 0.0;
    for (size_t base = 0; base < samples.size(); base += static_cast<size_t>(batch_size)) {
        const size_t len = std::min(samples.size() - base, static_cast<size_t>(batch_size));
        const std::span<const Sample> batch(samples.data() + base, len);

        Tape tape;
        std::vector<NodeId> leaf_ids;
        const NodeId loss = build_loss(tape, batch, leaf_ids);
        const double lv = tape.value(loss).data[0];
        if (!std::isfinite(lv))
            throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch));
        const auto adj = tape.backward(loss);

        std::vector<const TensorValue*> grads;
        grads.reserve(leaf_ids.size());
        for (NodeId id : leaf_ids) grads.push_back(&adj[static_cast<size_t>(id)]);
        opt.step(params, grads, lr);
        total += lv * static_cast<double>(len);
    }
    return total / static_cast<double>(samples.size());
}

} // namespace

TrainResult train_phase1(const TrainConfig& cfg, const NetworkConfig& net, const Dataset& data,
                         uint64_t seed, const EpochObserver& observer) {
    validate(cfg);
    validate(net);
    check_dataset(data, net);
    const DataSplit split = split_dataset(data.samples.size(), cfg.val_fraction, seed);
    std::vector<Sample> train_samples = gather(data, split.train);

    ModelParams params = init_params(net, ModelKind::twin, seed);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Rng shuffle_rng(mix_seed(seed, "shuffle-p1"));
    Rng noise_rng(mix_seed(seed, "noise-p1"));

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs_phase1; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs_phase1, cfg.lr_max, cfg.lr_min);
        const double train_loss = run_epoch(
            train_samples, cfg.batch_size, shuffle_rng, params, opt, lr, epoch,
            [&](Tape& tape, std::span<const Sample> batch, std::vector<NodeId>& leaf_ids) {
                const TwinBinding bind = bind_params(tape, std::get<TwinNetParams>(params), net);
                leaf_ids = binding_leaf_ids(bind);
                return phase1_loss(tape, bind, batch, noise_rng, cfg.weights);
            });
        result.history.push_back({epoch, lr, train_loss,
                                  std::numeric_limits<double>::quiet_NaN(),
                                  std::numeric_limits<double>::quiet_NaN()});
        if (observer) observer(epoch, params);
    }
    result.params = std::move(params);
    result.best_epoch = cfg.epochs_phase1 - 1;
    return result;
}

TrainResult train_phase2(const TrainConfig& cfg, const NetworkConfig& net,
                         const TwinNetParams& phase1_params, const Dataset& data, uint64_t seed,
                         const EpochObserver& observer) {
    validate(cfg);
    validate(net);
    check_dataset(data, net);
    const DataSplit split = split_dataset(data.samples.size(), cfg.val_fraction, seed);
    std::vector<Sample> train_samples = gather(data, split.train);
    const std::vector<Sample> val_samples = gather(data, split.val);

    TwinNetParams p = phase1_params;
    reinit_for_phase2(p, net, mix_seed(seed, "phase2-reinit"));
    ModelParams params = std::move(p);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Rng shuffle_rng(mix_seed(seed, "shuffle-p2"));

    TrainResult result;
    result.params = params; // epoch-0 fallback when training is skipped
    EarlyStopper stopper(cfg.patience);
    for (int epoch = 0; epoch < cfg.epochs_phase2; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs_phase2, cfg.lr_max, cfg.lr_min);
        const double train_loss = run_epoch(
            train_samples, cfg.batch_size, shuffle_rng, params, opt, lr, epoch,
            [&](Tape& tape, std::span<const Sample> batch, std::vector<NodeId>& leaf_ids) {
                const TwinBinding bind = bind_params(tape, std::get<TwinNetParams>(params), net);
                leaf_ids = binding_leaf_ids(bind);
                return phase2_loss(tape, bind, batch, cfg.weights);
            });
        const auto [val_loss, val_l1] =
            phase2_val_metrics(std::get<TwinNetParams>(params), net, val_samples, cfg.weights);
        result.history.push_back({epoch, lr, train_loss, val_loss, val_l1});
        if (observer) observer(epoch, params);
        const bool was_best = val_loss < stopper.best();
        const bool stop = stopper.update(val_loss, epoch);
        if (was_best) result.params = params;
        if (stop) break;
    }
    result.best_epoch = stopper.best_epoch();
    return result;
}

TrainResult train_comet(const TrainConfig& cfg, const NetworkConfig& net, const Dataset& data,
                        uint64_t seed, const EpochObserver& observer) {
    validate(cfg);
    validate(net);
    check_dataset(data, net);
    const DataSplit split = split_dataset(data.samples.size(), cfg.val_fraction, seed);
    std::vector<Sample> train_samples = gather(data, split.train);
    const std::vector<Sample> val_samples = gather(data, split.val);

    ModelParams params = init_params(net, ModelKind::comet, seed);
    AdamOptimizer opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Rng shuffle_rng(mix_seed(seed, "shuffle-comet"));
    Rng noise_rng(mix_seed(seed, "noise-comet"));

    TrainResult result;
    result.params = params;
    EarlyStopper stopper(cfg.patience);
    const int total = cfg.epochs_phase1;
    for (int epoch = 0; epoch < total; ++epoch) {
        const double lr = cosine_lr(epoch, total, cfg.lr_max, cfg.lr_min);
        const double train_loss = run_epoch(
            train_samples, cfg.batch_size, shuffle_rng, params, opt, lr, epoch,
            [&](Tape& tape, std::span<const Sample> batch, std::vector<NodeId>& leaf_ids) {
                const CometBinding bind = bind_params(tape, std::get<CometMlpParams>(params), net);
                leaf_ids = binding_leaf_ids(bind);
                return comet_loss(tape, bind, batch, noise_rng, cfg.weights);
            });
        // validation tracks the noise-free fit terms
        const double val_loss =
            comet_fit_value(std::get<CometMlpParams>(params), net, val_samples, cfg.weights);
        result.history.push_back({epoch, lr, train_loss, val_loss,
                                  std::numeric_limits<double>::quiet_NaN()});
        if (observer) observer(epoch, params);
        const bool was_best = val_loss < stopper.best();
        const bool stop = stopper.update(val_loss, epoch);
        if (was_best) result.params = params;
        if (stop) break;
    }
    result.best_epoch = stopper.best_epoch();
    return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("history: cannot open '" + path + "' for writing");
    out << "epoch,lr,train_loss,val_loss,val_l1\n";
    char buf[160];
    for (const auto& rec : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", rec.epoch, rec.lr,
                      rec.train_loss, rec.val_loss, rec.val_l1);
        out << buf;
    }
    if (!out) throw std::runtime_error("history: write to '" + path + "' failed");
}

} // namespace comlab
