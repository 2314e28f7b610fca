#pragma once

#include "comlab/losses.hpp"
#include "comlab/systems.hpp"
#include "comlab/training.hpp"

namespace comlab {

/// Derivative field of a trained model: s -> QR-projected sdot, the
/// constants-respecting prediction. For forced systems the force coefficients
/// supply F(t).
DerivFn model_field(const ModelParams& params, const NetworkConfig& cfg,
                    const std::optional<ForceCoeffs>& force = std::nullopt);

/// Learned constants c(s) evaluated pointwise (F = 0 for forced models unless
/// coefficients are given).
std::vector<double> model_constants(const ModelParams& params, const NetworkConfig& cfg,
                                    std::span<const double> s,
                                    std::span<const double> F = {});

struct RolloutResult {
    bool ok = false;
    Trajectory trajectory;
    std::string error;
};

/// Integrates an arbitrary field, converting integrator failures into a
/// recorded error rather than an exception.
RolloutResult rollout_field(const DerivFn& field, std::span<const double> s0, double t_end,
                            int n_points, const IntegrateOptions& opts = {});

RolloutResult rollout_model(const ModelParams& params, const NetworkConfig& cfg,
                            std::span<const double> s0, double t_end, int n_points,
                            const std::optional<ForceCoeffs>& force = std::nullopt,
                            const IntegrateOptions& opts = {});

/// Percentile by linear interpolation between order statistics, p in [0, 1].
double percentile(std::vector<double> values, double p);

struct EvalReport {
    std::string system;
    int n_sims = 0;
    double t_end = 0.0;
    int n_points = 0;
    std::vector<double> rmse; // per simulation; +inf marks a failed rollout
    double median = 0.0;
    double p2_5 = 0.0;
    double p97_5 = 0.0;
    int failures = 0;
    double wall_seconds = 0.0;
};

/// Runs n_sims rollouts from fresh initial conditions and reports RMSE
/// against the clean ground-truth trajectory from the same state: median and
/// 2.5% / 97.5% percentiles. Failed rollouts enter as +inf.
EvalReport rmse_stats(const ModelParams& params, const NetworkConfig& cfg, const SystemDef& sys,
                      int n_sims, double t_end, int n_points, uint64_t seed, int jobs = 1);

struct DriftSeries {
    std::string name;
    std::vector<double> values;
    double drift = 0.0;       // (max - min) / |mean|, or absolute when flagged
    bool absolute = false;    // |mean| below 1e-12: absolute spread reported
};

/// Evaluates a scalar rule along a trajectory.
DriftSeries constant_drift(const std::function<double(std::span<const double>)>& rule,
                           const Trajectory& traj, const std::string& name = "");

struct ContourGrid {
    int resolution = 0;
    double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
    int dim_x = 0, dim_y = 0;
    std::vector<double> values; // row-major, resolution x resolution, c_1 values
};

/// First learned constant over a 2-D slice of state space; remaining
/// coordinates are held at `fixed`.
ContourGrid contour_grid(const ModelParams& params, const NetworkConfig& cfg,
                         std::pair<int, int> dims, std::pair<double, double> x_bounds,
                         std::pair<double, double> y_bounds, int resolution,
                         std::span<const double> fixed);

void write_contour_csv(const ContourGrid& grid, const std::string& path);

/// Pearson correlation between a learned constant and a reference constant
/// over grid points (affine alignment is implicit in the correlation).
double grid_correlation(const ContourGrid& grid,
                        const std::function<double(std::span<const double>)>& reference,
                        std::span<const double> fixed);

struct ScanCell {
    int n_c = 0;
    uint64_t seed = 0;
    double l1 = 0.0;               // final residual on the run's validation split
    std::vector<double> l1_curve;  // per-epoch validation residual during phase 2
};

struct ScanResult {
    std::vector<int> nc_values;
    std::vector<double> mean_l1;
    std::vector<double> std_l1;
    std::vector<double> relative; // divided by the n_c = 0 mean
    int detected_nc = 0;
    double threshold = 3.0;
    std::vector<ScanCell> cells;
};

/// Largest scanned n_c whose relative residual stays at or below the
/// threshold — the last value before the sudden jump.
int detect_num_constants(std::span<const int> nc_values, std::span<const double> relative,
                         double threshold);

/// Trains the full two-phase model for every (n_c, seed) pair and tabulates
/// the final validation residual, normalized by the n_c = 0 value.
ScanResult scan_num_constants(const SystemDef& sys, const Dataset& data, int nc_max, int n_seeds,
                              const TrainConfig& train_cfg, const NetworkConfig& net_base,
                              uint64_t seed, double jump_threshold = 3.0, int jobs = 1);

} // namespace comlab
