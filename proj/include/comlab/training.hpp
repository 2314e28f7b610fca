#pragma once

#include <functional>
#include <optional>

#include "comlab/losses.hpp"

namespace comlab {

struct TrainConfig {
    int epochs_phase1 = 1000;
    int epochs_phase2 = 1000;
    int batch_size = 512;
    double lr_max = 1e-3;
    double lr_min = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<int> patience = 100; // phase-2 early stop; nullopt disables
    double val_fraction = 0.2;
    LossWeights weights;
};

void validate(const TrainConfig& cfg);

/// lr_min + (lr_max - lr_min)/2 * (1 + cos(pi * epoch / (total - 1))).
/// Starts at lr_max, ends at lr_min; total < 2 returns lr_max.
double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min);

/// Bias-corrected Adam over the trainable arrays of a model. Frozen arrays
/// carry no accumulators and are never touched.
class AdamOptimizer {
public:
    AdamOptimizer(ModelParams& params, double beta1, double beta2, double eps);

    /// grads must be aligned with param_refs(params); entries for frozen
    /// arrays are ignored. Throws on a non-finite gradient, naming the array.
    void step(ModelParams& params, const std::vector<const TensorValue*>& grads, double lr);

    int64_t step_count() const { return t_; }

private:
    struct Slot {
        TensorValue m, v;
        bool trainable = false;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// Validation-plateau detector: improvement resets the counter, `patience`
/// consecutive non-improving epochs stop the run.
class EarlyStopper {
public:
    explicit EarlyStopper(std::optional<int> patience) : patience_(patience) {}

    /// Returns true when training should stop after this epoch.
    bool update(double val_loss, int epoch);

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    std::optional<int> patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int since_best_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_l1 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
};

/// Deterministic train/validation index split (seed substream "split").
struct DataSplit {
    std::vector<size_t> train;
    std::vector<size_t> val;
};
DataSplit split_dataset(size_t n_samples, double val_fraction, uint64_t seed);

using EpochObserver = std::function<void(int epoch, const ModelParams&)>;

/// First phase: initializes every parameter and minimizes the
/// perpendicularity + semi-orthogonality objective over minibatches with the
/// cosine schedule. All parameters are trainable.
TrainResult train_phase1(const TrainConfig& cfg, const NetworkConfig& net, const Dataset& data,
                         uint64_t seed, const EpochObserver& observer = nullptr);

/// Second phase: freezes S/D, reinitializes everything else, and fits the
/// dynamics. Tracks validation loss each epoch, early-stops on a plateau, and
/// returns the best-validation parameters.
TrainResult train_phase2(const TrainConfig& cfg, const NetworkConfig& net,
                         const TwinNetParams& phase1_params, const Dataset& data, uint64_t seed,
                         const EpochObserver& observer = nullptr);

/// Single-phase baseline training on the combined loss.
TrainResult train_comet(const TrainConfig& cfg, const NetworkConfig& net, const Dataset& data,
                        uint64_t seed, const EpochObserver& observer = nullptr);

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path);

} // namespace comlab
