#pragma once

#include <map>
#include <string>

#include "comlab/evaluation.hpp"

namespace comlab {

/// Fully resolved run description. Every field has a default; flags override
/// config-file values and the resolved union lands in the run manifest, which
/// is itself a loadable config file.
struct RunConfig {
    std::string command;

    uint64_t seed = 0;
    std::string out_dir = ".";
    int jobs = 1;

    // generate
    std::string system; // required for generate/eval; consistency check in train
    double sigma = 0.05;
    int n_traj = 20;
    int n_points = 100;
    double t_end = 10.0;

    // train
    std::string model = "meta-comet";
    std::string dataset_path;
    NetworkConfig net;   // n_s / n_f resolved from the dataset
    TrainConfig train;

    // eval
    std::string checkpoint_path;
    int n_sims = 20;
    double eval_t_end = 20.0;
    int eval_n_points = 200;
    int contour_resolution = 50;

    // scan
    int nc_max = -1; // -1: scan the full range [0, n_s - 1]
    int n_seeds = 5;
    double jump_threshold = 3.0;
};

/// key = value lines; '#' comments; unknown keys rejected.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// COMLAB_SEED, when set, overrides the root seed.
void apply_env_overrides(RunConfig& cfg);

std::string serialize_config(const RunConfig& cfg);

uint64_t fnv1a_file(const std::string& path);

/// Each command writes its artifacts plus a manifest (resolved config +
/// artifact hashes) into cfg.out_dir and returns the manifest path.
std::string cmd_generate(const RunConfig& cfg);
std::string cmd_train(const RunConfig& cfg);
std::string cmd_eval(const RunConfig& cfg);
std::string cmd_scan(const RunConfig& cfg);
/// Prints the parameter-count table for all registered systems.
void cmd_params(std::ostream& out);

} // namespace comlab
