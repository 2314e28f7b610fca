#include "comlab/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace comlab {

namespace {

int parse_int(const std::string& key, const std::string& value) {
    size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size())
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + value + "'");
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size())
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + value + "'");
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    size_t pos = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size())
        throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" +
                                    value + "'");
    return v;
}

std::string fmt_g(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "command") cfg.command = value;
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "jobs") cfg.jobs = parse_int(key, value);
    else if (key == "system") cfg.system = value;
    else if (key == "sigma") cfg.sigma = parse_double(key, value);
    else if (key == "n_traj") cfg.n_traj = parse_int(key, value);
    else if (key == "n_points") cfg.n_points = parse_int(key, value);
    else if (key == "t_end") cfg.t_end = parse_double(key, value);
    else if (key == "model") cfg.model = value;
    else if (key == "dataset") cfg.dataset_path = value;
    else if (key == "n_c") cfg.net.n_c = parse_int(key, value);
    else if (key == "rank") cfg.net.rank = parse_int(key, value);
    else if (key == "width") cfg.net.width = parse_int(key, value);
    else if (key == "depth_hidden") cfg.net.depth_hidden = parse_int(key, value);
    else if (key == "epochs_phase1") cfg.train.epochs_phase1 = parse_int(key, value);
    else if (key == "epochs_phase2") cfg.train.epochs_phase2 = parse_int(key, value);
    else if (key == "batch_size") cfg.train.batch_size = parse_int(key, value);
    else if (key == "lr_max") cfg.train.lr_max = parse_double(key, value);
    else if (key == "lr_min") cfg.train.lr_min = parse_double(key, value);
    else if (key == "adam_beta1") cfg.train.adam_beta1 = parse_double(key, value);
    else if (key == "adam_beta2") cfg.train.adam_beta2 = parse_double(key, value);
    else if (key == "adam_eps") cfg.train.adam_eps = parse_double(key, value);
    else if (key == "patience") {
        if (value == "none") cfg.train.patience.reset();
        else cfg.train.patience = parse_int(key, value);
    } else if (key == "val_fraction") cfg.train.val_fraction = parse_double(key, value);
    else if (key == "w0") cfg.train.weights.w0 = parse_double(key, value);
    else if (key == "w1_comet") cfg.train.weights.w1_comet = parse_double(key, value);
    else if (key == "w2_comet") cfg.train.weights.w2_comet = parse_double(key, value);
    else if (key == "w1_ortho") {
        if (value == "auto") cfg.train.weights.w1_ortho.reset();
        else cfg.train.weights.w1_ortho = parse_double(key, value);
    } else if (key == "w2_ortho") {
        if (value == "auto") cfg.train.weights.w2_ortho.reset();
        else cfg.train.weights.w2_ortho = parse_double(key, value);
    } else if (key == "checkpoint") cfg.checkpoint_path = value;
    else if (key == "n_sims") cfg.n_sims = parse_int(key, value);
    else if (key == "eval_t_end") cfg.eval_t_end = parse_double(key, value);
    else if (key == "eval_n_points") cfg.eval_n_points = parse_int(key, value);
    else if (key == "contour_resolution") cfg.contour_resolution = parse_int(key, value);
    else if (key == "nc_max") cfg.nc_max = parse_int(key, value);
    else if (key == "n_seeds") cfg.n_seeds = parse_int(key, value);
    else if (key == "jump_threshold") cfg.jump_threshold = parse_double(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        std::string key, eq, value;
        if (!(ss >> key)) continue; // blank line
        if (!(ss >> eq) || eq != "=" || !(ss >> value))
            throw std::invalid_argument("config: malformed line " + std::to_string(line_no) +
                                        " in '" + path + "' (expected 'key = value')");
        apply_key(cfg, key, value);
    }
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* env = std::getenv("COMLAB_SEED")) cfg.seed = parse_u64("COMLAB_SEED", env);
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "command = " << cfg.command << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    out << "jobs = " << cfg.jobs << "\n";
    if (!cfg.system.empty()) out << "system = " << cfg.system << "\n";
    out << "sigma = " << fmt_g(cfg.sigma) << "\n";
    out << "n_traj = " << cfg.n_traj << "\n";
    out << "n_points = " << cfg.n_points << "\n";
    out << "t_end = " << fmt_g(cfg.t_end) << "\n";
    out << "model = " << cfg.model << "\n";
    if (!cfg.dataset_path.empty()) out << "dataset = " << cfg.dataset_path << "\n";
    out << "n_c = " << cfg.net.n_c << "\n";
    out << "rank = " << cfg.net.rank << "\n";
    out << "width = " << cfg.net.width << "\n";
    out << "depth_hidden = " << cfg.net.depth_hidden << "\n";
    out << "epochs_phase1 = " << cfg.train.epochs_phase1 << "\n";
    out << "epochs_phase2 = " << cfg.train.epochs_phase2 << "\n";
    out << "batch_size = " << cfg.train.batch_size << "\n";
    out << "lr_max = " << fmt_g(cfg.train.lr_max) << "\n";
    out << "lr_min = " << fmt_g(cfg.train.lr_min) << "\n";
    out << "adam_beta1 = " << fmt_g(cfg.train.adam_beta1) << "\n";
    out << "adam_beta2 = " << fmt_g(cfg.train.adam_beta2) << "\n";
    out << "adam_eps = " << fmt_g(cfg.train.adam_eps) << "\n";
    out << "patience = " << (cfg.train.patience ? std::to_string(*cfg.train.patience) : "none") << "\n";
    out << "val_fraction = " << fmt_g(cfg.train.val_fraction) << "\n";
    out << "w0 = " << fmt_g(cfg.train.weights.w0) << "\n";
    out << "w1_comet = " << fmt_g(cfg.train.weights.w1_comet) << "\n";
    out << "w2_comet = " << fmt_g(cfg.train.weights.w2_comet) << "\n";
    out << "w1_ortho = "
        << (cfg.train.weights.w1_ortho ? fmt_g(*cfg.train.weights.w1_ortho) : "auto") << "\n";
    out << "w2_ortho = "
        << (cfg.train.weights.w2_ortho ? fmt_g(*cfg.train.weights.w2_ortho) : "auto") << "\n";
    if (!cfg.checkpoint_path.empty()) out << "checkpoint = " << cfg.checkpoint_path << "\n";
    out << "n_sims = " << cfg.n_sims << "\n";
    out << "eval_t_end = " << fmt_g(cfg.eval_t_end) << "\n";
    out << "eval_n_points = " << cfg.eval_n_points << "\n";
    out << "contour_resolution = " << cfg.contour_resolution << "\n";
    out << "nc_max = " << cfg.nc_max << "\n";
    out << "n_seeds = " << cfg.n_seeds << "\n";
    out << "jump_threshold = " << fmt_g(cfg.jump_threshold) << "\n";
    return out.str();
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash: cannot open '" + path + "'");
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (in.eof()) break;
    }
    return h;
}

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out_dir);
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

std::string write_manifest(const RunConfig& cfg, const std::vector<std::string>& artifacts) {
    const std::string path = out_path(cfg, "manifest.txt");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("manifest: cannot open '" + path + "' for writing");
    out << serialize_config(cfg);
    for (const auto& artifact : artifacts) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a_file(artifact)));
        out << "# artifact " << std::filesystem::path(artifact).filename().string() << " " << buf
            << "\n";
    }
    if (!out) throw std::runtime_error("manifest: write failed");
    return path;
}

void write_rmse_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("eval: cannot open '" + path + "' for writing");
    out << "sim,rmse\n";
    char buf[64];
    for (size_t i = 0; i < report.rmse.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, report.rmse[i]);
        out << buf;
    }
}

void write_drift_csv(const std::vector<double>& times, const std::vector<DriftSeries>& series,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("eval: cannot open '" + path + "' for writing");
    out << "t";
    for (const auto& s : series) out << "," << s.name;
    out << "\n";
    char buf[64];
    for (size_t i = 0; i < times.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", times[i]);
        out << buf;
        for (const auto& s : series) {
            std::snprintf(buf, sizeof(buf), ",%.17g", s.values[i]);
            out << buf;
        }
        out << "\n";
    }
}

} // namespace

std::string cmd_generate(const RunConfig& cfg) {
    if (cfg.system.empty()) throw std::invalid_argument("generate: --system is required");
    if (cfg.sigma < 0.0) throw std::invalid_argument("generate: sigma must be >= 0");
    const SystemDef& sys = get_system(cfg.system);
    const Dataset ds =
        generate_dataset(sys, cfg.n_traj, cfg.t_end, cfg.n_points, cfg.sigma, cfg.seed);
    const std::string data_path = out_path(cfg, "dataset.csv");
    save_dataset(ds, data_path);
    return write_manifest(cfg, {data_path});
}

std::string cmd_train(const RunConfig& cfg) {
    if (cfg.dataset_path.empty()) throw std::invalid_argument("train: --dataset is required");
    const Dataset ds = load_dataset(cfg.dataset_path);
    if (!cfg.system.empty() && cfg.system != ds.system)
        throw std::invalid_argument("train: dataset holds system '" + ds.system +
                                    "' but the config names '" + cfg.system + "'");

    NetworkConfig net = cfg.net;
    net.n_s = ds.n_s;
    net.n_f = ds.n_f;
    validate(net);

    const ModelKind kind = model_kind_from_string(cfg.model);
    std::vector<std::string> artifacts;
    const std::string ckpt_path = out_path(cfg, "checkpoint.ckpt");

    if (kind == ModelKind::twin) {
        const TrainResult p1 = train_phase1(cfg.train, net, ds, cfg.seed);
        const TrainResult p2 =
            train_phase2(cfg.train, net, std::get<TwinNetParams>(p1.params), ds, cfg.seed);
        save_checkpoint(p2.params, net, ckpt_path);
        const std::string h1 = out_path(cfg, "history_phase1.csv");
        const std::string h2 = out_path(cfg, "history_phase2.csv");
        write_history_csv(p1.history, h1);
        write_history_csv(p2.history, h2);
        artifacts = {ckpt_path, h1, h2};
    } else {
        const TrainResult res = train_comet(cfg.train, net, ds, cfg.seed);
        save_checkpoint(res.params, net, ckpt_path);
        const std::string h = out_path(cfg, "history.csv");
        write_history_csv(res.history, h);
        artifacts = {ckpt_path, h};
    }
    return write_manifest(cfg, artifacts);
}

std::string cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint_path.empty()) throw std::invalid_argument("eval: --checkpoint is required");
    if (cfg.system.empty()) throw std::invalid_argument("eval: --system is required");
    auto [params, net] = load_checkpoint(cfg.checkpoint_path);
    const SystemDef& sys = get_system(cfg.system);
    if (net.n_s != sys.n_s || net.n_f != sys.n_f)
        throw std::invalid_argument("eval: checkpoint dimensions (n_s=" + std::to_string(net.n_s) +
                                    ", n_f=" + std::to_string(net.n_f) + ") do not match system '" +
                                    sys.name + "'");

    const EvalReport report = rmse_stats(params, net, sys, cfg.n_sims, cfg.eval_t_end,
                                         cfg.eval_n_points, cfg.seed, cfg.jobs);
    const std::string rmse_path = out_path(cfg, "rmse.csv");
    write_rmse_csv(report, rmse_path);
    std::vector<std::string> artifacts = {rmse_path};

    // drift of learned and true constants along one clean trajectory
    Rng rng(mix_seed(cfg.seed, "drift"));
    const auto s0 = sys.ic_sampler(rng);
    std::optional<ForceCoeffs> force;
    if (sys.forced) force = sample_force_coeffs(rng);
    const DerivFn rhs = [&](double t, std::span<const double> s, std::span<double> out) {
        const auto F = sys.forced ? external_force(t, *force) : std::vector<double>{};
        sys.derivative(s, t, F, out);
    };
    const Trajectory traj = integrate(rhs, s0, 0.0, cfg.eval_t_end, cfg.eval_n_points);

    std::vector<DriftSeries> series;
    for (int i = 0; i < net.n_c; ++i) {
        DriftSeries s;
        s.name = "learned_c" + std::to_string(i);
        s.values.reserve(traj.states.size());
        for (size_t j = 0; j < traj.states.size(); ++j) {
            const auto F = sys.forced ? external_force(traj.times[j], *force) : std::vector<double>{};
            s.values.push_back(model_constants(params, net, traj.states[j], F)[static_cast<size_t>(i)]);
        }
        series.push_back(std::move(s));
    }
    for (int i = 0; i < sys.n_c_true; ++i) {
        DriftSeries s;
        s.name = "true_c" + std::to_string(i);
        for (const auto& state : traj.states)
            s.values.push_back(true_constants(sys, state)[static_cast<size_t>(i)]);
        series.push_back(std::move(s));
    }
    const std::string drift_path = out_path(cfg, "drift.csv");
    write_drift_csv(traj.times, series, drift_path);
    artifacts.push_back(drift_path);

    if (net.n_c >= 1 && !sys.forced) {
        std::vector<double> fixed(static_cast<size_t>(net.n_s), 0.0);
        const ContourGrid grid = contour_grid(params, net, {0, 1}, {-1.0, 1.0}, {-1.0, 1.0},
                                              cfg.contour_resolution, fixed);
        const std::string contour_path = out_path(cfg, "contour.csv");
        write_contour_csv(grid, contour_path);
        artifacts.push_back(contour_path);
    }

    const std::string report_path = out_path(cfg, "report.txt");
    {
        std::ofstream out(report_path, std::ios::binary);
        char buf[256];
        out << "system " << report.system << "\n";
        out << "n_sims " << report.n_sims << "\n";
        out << "t_end " << fmt_g(report.t_end) << "\n";
        out << "n_points " << report.n_points << "\n";
        std::snprintf(buf, sizeof(buf), "rmse_median %.17g\nrmse_p2.5 %.17g\nrmse_p97.5 %.17g\n",
                      report.median, report.p2_5, report.p97_5);
        out << buf;
        out << "failures " << report.failures << "\n";
        out << "note rmse measured against clean analytic trajectories\n";
        for (const auto& s : series) {
            std::snprintf(buf, sizeof(buf), "drift %s %.17g%s\n", s.name.c_str(), s.drift,
                          s.absolute ? " (absolute)" : "");
            out << buf;
        }
    }
    artifacts.push_back(report_path);
    return write_manifest(cfg, artifacts);
}

std::string cmd_scan(const RunConfig& cfg) {
    if (cfg.dataset_path.empty()) throw std::invalid_argument("scan: --dataset is required");
    const Dataset ds = load_dataset(cfg.dataset_path);
    const SystemDef& sys = get_system(ds.system);
    const int nc_max = cfg.nc_max < 0 ? sys.n_s - 1 : cfg.nc_max;
    if (nc_max > sys.n_s - 1)
        throw std::invalid_argument("scan: nc_max " + std::to_string(nc_max) +
                                    " exceeds n_s-1 = " + std::to_string(sys.n_s - 1));

    NetworkConfig net = cfg.net;
    const ScanResult result = scan_num_constants(sys, ds, nc_max, cfg.n_seeds, cfg.train, net,
                                                 cfg.seed, cfg.jump_threshold, cfg.jobs);

    const std::string table_path = out_path(cfg, "scan.txt");
    {
        std::ofstream out(table_path, std::ios::binary);
        out << "system " << sys.name << "\n";
        out << "n_seeds " << cfg.n_seeds << "\n";
        out << "threshold " << fmt_g(result.threshold) << "\n";
        out << "detected_nc " << result.detected_nc << "\n";
        out << "n_c,mean_l1,std_l1,relative_l1\n";
        char buf[160];
        for (size_t i = 0; i < result.nc_values.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", result.nc_values[i],
                          result.mean_l1[i], result.std_l1[i], result.relative[i]);
            out << buf;
        }
    }

    const std::string curves_path = out_path(cfg, "scan_curves.csv");
    {
        std::ofstream out(curves_path, std::ios::binary);
        out << "n_c,run,epoch,val_l1\n";
        char buf[160];
        for (size_t c = 0; c < result.cells.size(); ++c) {
            const ScanCell& cell = result.cells[c];
            const int run = static_cast<int>(c) % cfg.n_seeds;
            for (size_t e = 0; e < cell.l1_curve.size(); ++e) {
                std::snprintf(buf, sizeof(buf), "%d,%d,%zu,%.17g\n", cell.n_c, run, e,
                              cell.l1_curve[e]);
                out << buf;
            }
        }
    }
    return write_manifest(cfg, {table_path, curves_path});
}

void cmd_params(std::ostream& out) {
    struct Row {
        const char* system;
        int n_s, n_c, n_f, rank;
    };
    // reference configurations: width 250, two hidden layers
    const Row rows[] = {
        {"mass-spring", 2, 1, 0, 10},        {"2d-pendulum", 4, 3, 0, 10},
        {"damped-pendulum", 4, 2, 0, 10},    {"two-body", 8, 7, 0, 20},
        {"nonlinear-spring-2d", 4, 2, 0, 30}, {"lotka-volterra", 2, 1, 0, 10},
    };
    out << "system,rank,meta_comet_params,comet_params\n";
    for (const Row& row : rows) {
        NetworkConfig net;
        net.n_s = row.n_s;
        net.n_c = row.n_c;
        net.n_f = row.n_f;
        net.rank = row.rank;
        out << row.system << "," << row.rank << "," << count_params(net, ModelKind::twin) << ","
            << count_params(net, ModelKind::comet) << "\n";
    }
}

} // namespace comlab
