// Command-line front end: generate / train / eval / scan / params.
// Flags override --config values; the resolved union is written to the run
// manifest, which can itself be passed back via --config to reproduce a run.

#include <CLI11.hpp>
#include <iostream>

#include "comlab/cli.hpp"

namespace {

struct PendingFlags {
    std::map<std::string, std::string> values;
};

// CLI11 options are captured as strings and replayed through apply_key after
// the config file, so precedence is: defaults < config file < flags < env.
void add_key_option(CLI::App* cmd, PendingFlags& pending, const std::string& flag,
                    const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&pending, key](const std::string& v) { pending.values[key] = v; }, help);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"constants-of-motion learning with a low-rank twin network"};
    app.require_subcommand(1);

    comlab::RunConfig cfg;
    PendingFlags pending;
    std::string config_path;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        add_key_option(cmd, pending, "--seed", "seed", "root seed");
        add_key_option(cmd, pending, "--out", "out_dir", "output directory");
        add_key_option(cmd, pending, "--jobs", "jobs", "parallel workers (default 1)");
    };

    CLI::App* generate = app.add_subcommand("generate", "simulate a system and write a dataset");
    add_common(generate);
    add_key_option(generate, pending, "--system", "system", "dynamical system name");
    add_key_option(generate, pending, "--sigma", "sigma", "noise standard deviation");
    add_key_option(generate, pending, "--n-traj", "n_traj", "number of trajectories");
    add_key_option(generate, pending, "--n-points", "n_points", "samples per trajectory");
    add_key_option(generate, pending, "--t-end", "t_end", "simulation end time");

    CLI::App* train = app.add_subcommand("train", "fit a model to a dataset");
    add_common(train);
    add_key_option(train, pending, "--dataset", "dataset", "dataset file");
    add_key_option(train, pending, "--system", "system", "expected system (consistency check)");
    add_key_option(train, pending, "--model", "model", "meta-comet or comet");
    add_key_option(train, pending, "--nc", "n_c", "number of constants of motion");
    add_key_option(train, pending, "--rank", "rank", "factored-layer rank");
    add_key_option(train, pending, "--width", "width", "hidden width");
    add_key_option(train, pending, "--depth-hidden", "depth_hidden", "factored hidden layers");
    add_key_option(train, pending, "--epochs-phase1", "epochs_phase1", "first-phase epochs");
    add_key_option(train, pending, "--epochs-phase2", "epochs_phase2", "second-phase epochs");
    add_key_option(train, pending, "--batch-size", "batch_size", "minibatch size");
    add_key_option(train, pending, "--patience", "patience", "early-stop patience or 'none'");

    CLI::App* eval = app.add_subcommand("eval", "roll out a checkpoint and report accuracy");
    add_common(eval);
    add_key_option(eval, pending, "--checkpoint", "checkpoint", "checkpoint file");
    add_key_option(eval, pending, "--system", "system", "ground-truth system");
    add_key_option(eval, pending, "--n-sims", "n_sims", "number of rollouts");
    add_key_option(eval, pending, "--t-end", "eval_t_end", "rollout end time");
    add_key_option(eval, pending, "--n-points", "eval_n_points", "samples per rollout");
    add_key_option(eval, pending, "--contour-resolution", "contour_resolution", "contour grid size");

    CLI::App* scan = app.add_subcommand("scan", "scan n_c and locate the residual jump");
    add_common(scan);
    add_key_option(scan, pending, "--dataset", "dataset", "dataset file");
    add_key_option(scan, pending, "--nc-max", "nc_max", "largest n_c to scan (default n_s-1)");
    add_key_option(scan, pending, "--seeds", "n_seeds", "training seeds per n_c");
    add_key_option(scan, pending, "--rank", "rank", "factored-layer rank");
    add_key_option(scan, pending, "--width", "width", "hidden width");
    add_key_option(scan, pending, "--epochs-phase1", "epochs_phase1", "first-phase epochs");
    add_key_option(scan, pending, "--epochs-phase2", "epochs_phase2", "second-phase epochs");
    add_key_option(scan, pending, "--jump-threshold", "jump_threshold", "flat/jump boundary");

    CLI::App* params = app.add_subcommand("params", "print the parameter-count table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (params->parsed()) {
            comlab::cmd_params(std::cout);
            return 0;
        }
        if (!config_path.empty()) comlab::apply_config_file(cfg, config_path);
        for (const auto& [key, value] : pending.values) comlab::apply_key(cfg, key, value);
        comlab::apply_env_overrides(cfg);

        std::string manifest;
        if (generate->parsed()) {
            cfg.command = "generate";
            manifest = comlab::cmd_generate(cfg);
        } else if (train->parsed()) {
            cfg.command = "train";
            manifest = comlab::cmd_train(cfg);
        } else if (eval->parsed()) {
            cfg.command = "eval";
            manifest = comlab::cmd_eval(cfg);
        } else if (scan->parsed()) {
            cfg.command = "scan";
            manifest = comlab::cmd_scan(cfg);
        }
        std::cout << "wrote " << manifest << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
