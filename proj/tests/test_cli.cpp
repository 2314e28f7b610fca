#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "comlab/cli.hpp"

using namespace comlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig tiny_train_config(const std::string& dataset, const std::string& out) {
    RunConfig cfg;
    cfg.command = "train";
    cfg.dataset_path = dataset;
    cfg.out_dir = out;
    cfg.net.n_c = 1;
    cfg.net.rank = 3;
    cfg.net.width = 12;
    cfg.train.epochs_phase1 = 5;
    cfg.train.epochs_phase2 = 8;
    cfg.train.batch_size = 64;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST_CASE("generate writes a dataset with the requested header and is byte-stable") {
    TempDir dir("comlab_cli_gen");
    RunConfig cfg;
    cfg.command = "generate";
    cfg.system = "mass-spring";
    cfg.sigma = 0.1;
    cfg.seed = 7;
    cfg.n_traj = 3;
    cfg.n_points = 20;
    cfg.out_dir = dir.sub("a");
    cmd_generate(cfg);

    const std::string data = read_file(dir.sub("a") + "/dataset.csv");
    CHECK(data.find("system mass-spring") != std::string::npos);
    CHECK(data.find("sigma 0.1") != std::string::npos);

    cfg.out_dir = dir.sub("b");
    cmd_generate(cfg);
    CHECK(read_file(dir.sub("b") + "/dataset.csv") == data);
}

TEST_CASE("generate validates its inputs") {
    TempDir dir("comlab_cli_gen_bad");
    RunConfig cfg;
    cfg.command = "generate";
    cfg.out_dir = dir.sub("x");
    cfg.system = "not-a-system";
    CHECK_THROWS_WITH_AS(cmd_generate(cfg), doctest::Contains("mass-spring"),
                         std::invalid_argument);
    cfg.system = "mass-spring";
    cfg.sigma = -1.0;
    CHECK_THROWS_AS(cmd_generate(cfg), std::invalid_argument);
}

TEST_CASE("config files reject unknown keys and flags take precedence") {
    TempDir dir("comlab_cli_cfg");
    {
        std::ofstream out(dir.sub("good.cfg"));
        out << "# comment line\n";
        out << "seed = 11\n";
        out << "sigma = 0.2\n";
    }
    RunConfig cfg;
    apply_config_file(cfg, dir.sub("good.cfg"));
    CHECK(cfg.seed == 11);
    CHECK(cfg.sigma == 0.2);
    apply_key(cfg, "sigma", "0.05"); // a later flag overrides
    CHECK(cfg.sigma == 0.05);

    {
        std::ofstream out(dir.sub("bad.cfg"));
        out << "sigma_typo = 0.2\n";
    }
    RunConfig cfg2;
    CHECK_THROWS_WITH_AS(apply_config_file(cfg2, dir.sub("bad.cfg")),
                         doctest::Contains("unknown key"), std::invalid_argument);

    CHECK_THROWS_AS(apply_key(cfg2, "n_traj", "many"), std::invalid_argument);
}

TEST_CASE("train writes a checkpoint whose size matches the advertised count") {
    TempDir dir("comlab_cli_train");
    RunConfig gen;
    gen.command = "generate";
    gen.system = "mass-spring";
    gen.sigma = 0.0;
    gen.seed = 5;
    gen.n_traj = 4;
    gen.n_points = 30;
    gen.out_dir = dir.sub("data");
    cmd_generate(gen);

    RunConfig cfg = tiny_train_config(dir.sub("data") + "/dataset.csv", dir.sub("run"));
    cmd_train(cfg);

    auto [params, net] = load_checkpoint(dir.sub("run") + "/checkpoint.ckpt");
    int64_t total = 0;
    for (const auto& ref : param_refs(params)) total += ref.array->size();
    CHECK(total == count_params(net, ModelKind::twin));
    CHECK(fs::exists(dir.sub("run") + "/history_phase1.csv"));
    CHECK(fs::exists(dir.sub("run") + "/history_phase2.csv"));
    CHECK(fs::exists(dir.sub("run") + "/manifest.txt"));

    // paper-scale configs advertise the reference parameter counts
    RunConfig big = cfg;
    big.net.rank = 10;
    big.net.width = 250;
    big.net.n_c = 1;
    NetworkConfig net_big = big.net;
    net_big.n_s = 2;
    CHECK(count_params(net_big, ModelKind::twin) == 12273);
    CHECK(count_params(net_big, ModelKind::comet) == 189753);
}

TEST_CASE("train rejects a dataset/system mismatch") {
    TempDir dir("comlab_cli_mismatch");
    RunConfig gen;
    gen.command = "generate";
    gen.system = "mass-spring";
    gen.seed = 5;
    gen.n_traj = 2;
    gen.n_points = 10;
    gen.out_dir = dir.sub("data");
    cmd_generate(gen);

    RunConfig cfg = tiny_train_config(dir.sub("data") + "/dataset.csv", dir.sub("run"));
    cfg.system = "lotka-volterra";
    CHECK_THROWS_WITH_AS(cmd_train(cfg), doctest::Contains("mass-spring"), std::invalid_argument);
}

TEST_CASE("rerunning a manifest reproduces the checkpoint bitwise") {
    TempDir dir("comlab_cli_rerun");
    RunConfig gen;
    gen.command = "generate";
    gen.system = "mass-spring";
    gen.sigma = 0.05;
    gen.seed = 9;
    gen.n_traj = 4;
    gen.n_points = 25;
    gen.out_dir = dir.sub("data");
    cmd_generate(gen);

    RunConfig cfg = tiny_train_config(dir.sub("data") + "/dataset.csv", dir.sub("run1"));
    const std::string manifest = cmd_train(cfg);

    // replay from the manifest file alone, into a fresh directory
    RunConfig replay;
    apply_config_file(replay, manifest);
    replay.out_dir = dir.sub("run2");
    cmd_train(replay);

    CHECK(read_file(dir.sub("run1") + "/checkpoint.ckpt") ==
          read_file(dir.sub("run2") + "/checkpoint.ckpt"));
    CHECK(read_file(dir.sub("run1") + "/history_phase2.csv") ==
          read_file(dir.sub("run2") + "/history_phase2.csv"));
}

TEST_CASE("eval writes the report with one rmse entry per simulation") {
    TempDir dir("comlab_cli_eval");
    RunConfig gen;
    gen.command = "generate";
    gen.system = "mass-spring";
    gen.sigma = 0.0;
    gen.seed = 5;
    gen.n_traj = 4;
    gen.n_points = 30;
    gen.out_dir = dir.sub("data");
    cmd_generate(gen);
    RunConfig train = tiny_train_config(dir.sub("data") + "/dataset.csv", dir.sub("run"));
    cmd_train(train);

    RunConfig eval;
    eval.command = "eval";
    eval.system = "mass-spring";
    eval.checkpoint_path = dir.sub("run") + "/checkpoint.ckpt";
    eval.out_dir = dir.sub("eval");
    eval.n_sims = 6;
    eval.eval_t_end = 3.0;
    eval.eval_n_points = 30;
    eval.contour_resolution = 8;
    eval.seed = 21;
    cmd_eval(eval);

    const std::string rmse = read_file(dir.sub("eval") + "/rmse.csv");
    CHECK(std::count(rmse.begin(), rmse.end(), '\n') == 7); // header + 6 sims
    const std::string report = read_file(dir.sub("eval") + "/report.txt");
    CHECK(report.find("rmse_median") != std::string::npos);
    CHECK(report.find("drift learned_c0") != std::string::npos);
    CHECK(fs::exists(dir.sub("eval") + "/contour.csv"));
    CHECK(fs::exists(dir.sub("eval") + "/drift.csv"));

    // checkpoint/system mismatch is rejected
    eval.system = "two-body";
    CHECK_THROWS_AS(cmd_eval(eval), std::invalid_argument);
}

TEST_CASE("scan honours the n_c bound and reports unit baseline") {
    TempDir dir("comlab_cli_scan");
    RunConfig gen;
    gen.command = "generate";
    gen.system = "mass-spring";
    gen.sigma = 0.0;
    gen.seed = 5;
    gen.n_traj = 3;
    gen.n_points = 25;
    gen.out_dir = dir.sub("data");
    cmd_generate(gen);

    RunConfig scan;
    scan.command = "scan";
    scan.dataset_path = dir.sub("data") + "/dataset.csv";
    scan.out_dir = dir.sub("scan");
    scan.nc_max = 0;
    scan.n_seeds = 1;
    scan.net.width = 10;
    scan.net.rank = 2;
    scan.train.epochs_phase1 = 3;
    scan.train.epochs_phase2 = 4;
    scan.train.batch_size = 64;
    scan.seed = 2;
    cmd_scan(scan);
    const std::string table = read_file(dir.sub("scan") + "/scan.txt");
    CHECK(table.find("detected_nc 0") != std::string::npos);
    CHECK(table.find("0,") != std::string::npos);

    scan.nc_max = 5; // exceeds n_s - 1 = 1
    CHECK_THROWS_AS(cmd_scan(scan), std::invalid_argument);
}

TEST_CASE("environment seed override") {
    RunConfig cfg;
    cfg.seed = 1;
    setenv("COMLAB_SEED", "424242", 1);
    apply_env_overrides(cfg);
    unsetenv("COMLAB_SEED");
    CHECK(cfg.seed == 424242);
}

TEST_CASE("params table prints the reference counts") {
    std::ostringstream out;
    cmd_params(out);
    const std::string table = out.str();
    CHECK(table.find("mass-spring,10,12273,189753") != std::string::npos);
    CHECK(table.find("two-body,20,28305,194265") != std::string::npos);
    CHECK(table.find("nonlinear-spring-2d,30,34066,191006") != std::string::npos);
}
