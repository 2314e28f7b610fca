#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "comlab/tape.hpp"

namespace comlab {

enum class ModelKind { twin, comet };
enum class Activation { silu };

ModelKind model_kind_from_string(const std::string& s);
const char* to_string(ModelKind k);

struct NetworkConfig {
    int n_s = 0;            // state dimension
    int n_c = 0;            // number of constants of motion to learn
    int n_f = 0;            // external-force input dimension (0 if none)
    int width = 250;        // hidden width
    int depth_hidden = 2;   // number of factored hidden layers L
    int rank = 1;           // r
    Activation activation = Activation::silu;
};

/// Throws unless n_c < n_s, rank >= 1, width >= rank, depth_hidden >= 1.
void validate(const NetworkConfig& cfg);

/// One factored hidden layer: the left/right factors S, D (width x rank,
/// semi-orthogonal after training) shared by both network paths, and the
/// singular values v (rank) used only by the derivative path. Negative
/// entries of v are truncated by relu at use, giving an adaptive rank.
struct LowRankLayerParams {
    TensorValue S; // width x rank
    TensorValue v; // rank x 1
    TensorValue D; // width x rank
};

/// Twin-path network: two private boundary FC layers per path plus shared
/// factored hidden layers (no hidden bias). The derivative path produces
/// sdot0, the constants path produces c; both consume [s, F].
struct TwinNetParams {
    TensorValue W_h0, b_h0;   // input FC, derivative path
    TensorValue W_k0, b_k0;   // input FC, constants path
    std::vector<LowRankLayerParams> hidden;
    TensorValue W_hL1, b_hL1; // output FC, derivative path (width -> n_s)
    TensorValue W_kL1, b_kL1; // output FC, constants path (width -> n_c)
    bool factors_frozen = false;
};

/// Plain five-layer MLP baseline; output splits into [sdot0 (n_s), c (n_c)].
struct CometMlpParams {
    std::vector<TensorValue> W; // 5 weight matrices
    std::vector<TensorValue> b; // 5 biases
};

using ModelParams = std::variant<TwinNetParams, CometMlpParams>;

ModelKind kind_of(const ModelParams& params);

/// Named view over a model's arrays, in a fixed traversal order. trainable is
/// false only for S/D once frozen for the second training phase.
struct ParamRef {
    std::string name;
    TensorValue* array = nullptr;
    bool trainable = true;
};

std::vector<ParamRef> param_refs(TwinNetParams& p);
std::vector<ParamRef> param_refs(CometMlpParams& p);
std::vector<ParamRef> param_refs(ModelParams& p);

int64_t count_params(const NetworkConfig& cfg, ModelKind kind);

/// FC weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with zero biases;
/// S and D are orthonormalized Gaussian draws; v uniform(0.5, 1.5).
/// Deterministic given the seed.
ModelParams init_params(const NetworkConfig& cfg, ModelKind kind, uint64_t seed);

/// Keeps every S and D bitwise intact and marks them frozen; redraws v and
/// all four boundary FC layers as in init_params.
void reinit_for_phase2(TwinNetParams& p, const NetworkConfig& cfg, uint64_t seed);

// --- forward passes -------------------------------------------------------

/// Parameter arrays realized as tape leaves, shared across the samples of a
/// batch so that adjoints accumulate. Also carries hoisted per-tape nodes
/// (factor transposes, ones vectors) reused by every sample.
struct TwinBinding {
    NodeId W_h0, b_h0, W_k0, b_k0, W_hL1, b_hL1, W_kL1, b_kL1;
    struct HiddenNodes {
        NodeId S, v, D, D_t, relu_v;
    };
    std::vector<HiddenNodes> hidden;
    NodeId W_k0_state_cols; // W_k0 restricted to the state columns
    NodeId ones_nc;         // n_c x 1
    NetworkConfig cfg;
};

struct CometBinding {
    std::vector<NodeId> W, b;
    NodeId W1_state_cols;
    NodeId W_last_c_rows; // rows of the last FC that produce c
    NodeId ones_nc;
    NetworkConfig cfg;
};

TwinBinding bind_params(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg);
CometBinding bind_params(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg);

struct ForwardNodes {
    NodeId sdot0 = -1;             // n_s x 1
    NodeId c = -1;                 // n_c x 1
    std::vector<NodeId> c_preacts; // constants-path pre-activations z^0..z^L
};

/// x is the concatenated input [s, F] as a tape node ((n_s+n_f) x 1).
ForwardNodes forward_nodes(Tape& tape, const TwinBinding& bind, NodeId x);
ForwardNodes forward_nodes(Tape& tape, const CometBinding& bind, NodeId x);

/// Exact Jacobian of c with respect to the state coordinates only (force
/// columns excluded), built from tape primitives so it is differentiable:
/// rows are chain products of layer matrices and activation-derivative
/// diagonals evaluated at the cached pre-activations.
NodeId constants_input_gradient_nodes(Tape& tape, const TwinBinding& bind,
                                      const ForwardNodes& fwd);
NodeId constants_input_gradient_nodes(Tape& tape, const CometBinding& bind,
                                      const ForwardNodes& fwd);

// Convenience single-sample entry points (bind + forward).
struct ForwardResult {
    NodeId sdot0, c;
};
ForwardResult twin_forward(Tape& tape, const TwinNetParams& p, const NetworkConfig& cfg,
                           std::span<const double> s, std::span<const double> F = {});
ForwardResult comet_forward(Tape& tape, const CometMlpParams& p, const NetworkConfig& cfg,
                            std::span<const double> s, std::span<const double> F = {});
NodeId constants_input_gradient(Tape& tape, const ModelParams& p, const NetworkConfig& cfg,
                                std::span<const double> s, std::span<const double> F = {});

// --- checkpoints ------------------------------------------------------------

/// Structured-text header (format version, model kind, config, array manifest
/// with shapes and byte offsets) followed by raw little-endian 64-bit float
/// arrays in manifest order. Round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const NetworkConfig& cfg, const std::string& path);
std::pair<ModelParams, NetworkConfig> load_checkpoint(const std::string& path);

} // namespace comlab
