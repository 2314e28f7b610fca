#pragma once

#include <optional>
#include <span>

#include "comlab/dataset.hpp"
#include "comlab/models.hpp"
#include "comlab/rng.hpp"

namespace comlab {

struct LossWeights {
    double w0 = 1.0;       // phase-2 weight on the unprojected derivative error
    double w1_comet = 1.0; // baseline regularization weights (tunable)
    double w2_comet = 1.0;
    std::optional<double> w1_ortho; // semi-orthogonality weights; default 1/r^2
    std::optional<double> w2_ortho;
};

double resolve_ortho_weight(const std::optional<double>& w, int rank);

/// Per-coordinate i.i.d. uniform draw over [0, 0.1): the constraint noise
/// that spreads the perpendicularity condition beyond the training states.
std::vector<double> sample_constraint_noise(Rng& rng, int n_s);

/// Batch mean of sum_i (grad c_i(s + noise) . sdot0(s + noise))^2, with a
/// fresh noise draw per sample. Works for either architecture.
NodeId ortho_residual(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch, Rng& rng);
NodeId ortho_residual(Tape& tape, const CometBinding& bind, std::span<const Sample> batch, Rng& rng);

/// sum_l w1 ||S^T S - I||_F^2 + w2 ||D^T D - I||_F^2 over the hidden layers.
NodeId semi_orthogonality_penalty(Tape& tape, std::span<const TwinBinding::HiddenNodes> hidden,
                                  int rank, const LossWeights& weights = {});

/// First-phase objective: perpendicularity residual plus the
/// semi-orthogonality penalty.
NodeId phase1_loss(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch, Rng& rng,
                   const LossWeights& weights = {});

/// Second-phase objective: ||sdot - target||^2 + w0 ||sdot0 - target||^2,
/// batch mean, where sdot is the QR-projected derivative. No noise and no
/// orthogonality term.
NodeId phase2_loss(Tape& tape, const TwinBinding& bind, std::span<const Sample> batch,
                   const LossWeights& weights = {});

/// Single-loss baseline objective: ||sdot - target||^2 + w1 ||sdot0 -
/// target||^2 + w2 * constraint residual at noise-perturbed states.
NodeId comet_loss(Tape& tape, const CometBinding& bind, std::span<const Sample> batch, Rng& rng,
                  const LossWeights& weights = {});

// Convenience overloads that bind the parameters themselves.
NodeId phase1_loss(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                   std::span<const Sample> batch, Rng& rng, const LossWeights& weights = {});
NodeId phase2_loss(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                   std::span<const Sample> batch, const LossWeights& weights = {});
NodeId comet_loss(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg,
                  std::span<const Sample> batch, Rng& rng, const LossWeights& weights = {});

/// The projected derivative for one forward pass; shortcut when there are no
/// constants to respect.
NodeId projected_sdot(Tape& tape, const TwinBinding& bind, const ForwardNodes& fwd);
NodeId projected_sdot(Tape& tape, const CometBinding& bind, const ForwardNodes& fwd);

/// Mean squared norm of (projected derivative - target): the residual used to
/// detect the number of constants of motion. Evaluation-only.
double residual_L1(const ModelParams& params, const NetworkConfig& cfg,
                   std::span<const Sample> batch);

/// Forward-only evaluation of the fitting losses, for validation tracking.
double phase2_loss_value(const TwinNetParams& p, const NetworkConfig& cfg,
                         std::span<const Sample> batch, const LossWeights& weights = {});
/// (phase-2 loss, residual L1) over a batch in a single forward pass.
std::pair<double, double> phase2_val_metrics(const TwinNetParams& p, const NetworkConfig& cfg,
                                             std::span<const Sample> batch,
                                             const LossWeights& weights = {});
double comet_fit_value(const CometMlpParams& p, const NetworkConfig& cfg,
                       std::span<const Sample> batch, const LossWeights& weights = {});

} // namespace comlab
