#include "comlab/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

namespace comlab {

DerivFn model_field(const ModelParams& params, const NetworkConfig& cfg,
                    const std::optional<ForceCoeffs>& force) {
    if (cfg.n_f > 0 && !force)
        throw std::invalid_argument("model_field: model expects a force input");
    // params captured by value: rollouts own an immutable copy
    return [params, cfg, force](double t, std::span<const double> s, std::span<double> out) {
        Tape tape;
        std::vector<double> F;
        if (force) F = external_force(t, *force);
        TensorValue x(cfg.n_s + cfg.n_f, 1);
        for (int i = 0; i < cfg.n_s; ++i) x.data[static_cast<size_t>(i)] = s[static_cast<size_t>(i)];
        for (int i = 0; i < cfg.n_f; ++i) x.data[static_cast<size_t>(cfg.n_s + i)] = F[static_cast<size_t>(i)];
        const NodeId xid = tape.leaf(std::move(x));
        NodeId sdot;
        if (const auto* twin = std::get_if<TwinNetParams>(&params)) {
            const TwinBinding bind = bind_params(tape, *twin, cfg);
            sdot = projected_sdot(tape, bind, forward_nodes(tape, bind, xid));
        } else {
            const CometBinding bind = bind_params(tape, std::get<CometMlpParams>(params), cfg);
            sdot = projected_sdot(tape, bind, forward_nodes(tape, bind, xid));
        }
        const TensorValue& v = tape.value(sdot);
        for (int i = 0; i < cfg.n_s; ++i) out[static_cast<size_t>(i)] = v.data[static_cast<size_t>(i)];
    };
}

std::vector<double> model_constants(const ModelParams& params, const NetworkConfig& cfg,
                                    std::span<const double> s, std::span<const double> F) {
    Tape tape;
    std::vector<double> zero_force(static_cast<size_t>(cfg.n_f), 0.0);
    const std::span<const double> force = F.empty() && cfg.n_f > 0 ? std::span<const double>(zero_force) : F;
    const ForwardResult fwd =
        std::holds_alternative<TwinNetParams>(params)
            ? twin_forward(tape, std::get<TwinNetParams>(params), cfg, s, force)
            : comet_forward(tape, std::get<CometMlpParams>(params), cfg, s, force);
    return tape.value(fwd.c).data;
}

RolloutResult rollout_field(const DerivFn& field, std::span<const double> s0, double t_end,
                            int n_points, const IntegrateOptions& opts) {
    RolloutResult result;
    try {
        result.trajectory = integrate(field, s0, 0.0, t_end, n_points, opts);
        result.ok = true;
    } catch (const std::exception& e) {
        result.error = e.what();
    }
    return result;
}

RolloutResult rollout_model(const ModelParams& params, const NetworkConfig& cfg,
                            std::span<const double> s0, double t_end, int n_points,
                            const std::optional<ForceCoeffs>& force, const IntegrateOptions& opts) {
    return rollout_field(model_field(params, cfg, force), s0, t_end, n_points, opts);
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: empty sample");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = p * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    // interpolation involving an infinite order statistic stays infinite
    if (std::isinf(values[lo]) || std::isinf(values[hi])) return frac > 0.0 ? values[hi] : values[lo];
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

double trajectory_rmse(const Trajectory& pred, const Trajectory& truth) {
    double acc = 0.0;
    size_t count = 0;
    for (size_t j = 0; j < truth.states.size(); ++j) {
        for (size_t d = 0; d < truth.states[j].size(); ++d) {
            const double e = pred.states[j][d] - truth.states[j][d];
            acc += e * e;
            ++count;
        }
    }
    return std::sqrt(acc / static_cast<double>(count));
}

// Deterministic work distribution: the work list is precomputed and each
// worker writes only its own slots, so the result is independent of `jobs`.
void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

} // namespace

EvalReport rmse_stats(const ModelParams& params, const NetworkConfig& cfg, const SystemDef& sys,
                      int n_sims, double t_end, int n_points, uint64_t seed, int jobs) {
    if (n_sims < 1) throw std::invalid_argument("rmse_stats: n_sims must be >= 1");
    const auto t_start = std::chrono::steady_clock::now();

    EvalReport report;
    report.system = sys.name;
    report.n_sims = n_sims;
    report.t_end = t_end;
    report.n_points = n_points;
    report.rmse.assign(static_cast<size_t>(n_sims), 0.0);

    IntegrateOptions truth_opts;
    IntegrateOptions model_opts;
    model_opts.atol = model_opts.rtol = 1e-6;
    model_opts.max_step = t_end; // learned fields can be locally flat; cap growth

    parallel_for(n_sims, jobs, [&](int i) {
        Rng rng(mix_seed(seed, "rollout", static_cast<uint64_t>(i)));
        const auto s0 = sys.ic_sampler(rng);
        std::optional<ForceCoeffs> force;
        if (sys.forced) force = sample_force_coeffs(rng);

        const DerivFn truth_rhs = [&](double t, std::span<const double> s, std::span<double> out) {
            const auto F = sys.forced ? external_force(t, *force) : std::vector<double>{};
            sys.derivative(s, t, F, out);
        };
        Trajectory truth;
        try {
            truth = integrate(truth_rhs, s0, 0.0, t_end, n_points, truth_opts);
        } catch (const std::exception&) {
            report.rmse[static_cast<size_t>(i)] = std::numeric_limits<double>::infinity();
            return;
        }
        const RolloutResult rollout =
            rollout_field(model_field(params, cfg, force), s0, t_end, n_points, model_opts);
        report.rmse[static_cast<size_t>(i)] = rollout.ok
                                                  ? trajectory_rmse(rollout.trajectory, truth)
                                                  : std::numeric_limits<double>::infinity();
    });

    for (double r : report.rmse)
        if (std::isinf(r)) ++report.failures;
    if (report.failures == n_sims) throw std::runtime_error("rmse_stats: all rollouts failed");

    report.median = percentile(report.rmse, 0.5);
    report.p2_5 = percentile(report.rmse, 0.025);
    report.p97_5 = percentile(report.rmse, 0.975);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

DriftSeries constant_drift(const std::function<double(std::span<const double>)>& rule,
                           const Trajectory& traj, const std::string& name) {
    if (traj.states.empty()) throw std::invalid_argument("constant_drift: empty trajectory");
    DriftSeries series;
    series.name = name;
    series.values.reserve(traj.states.size());
    double mean = 0.0;
    for (const auto& s : traj.states) {
        series.values.push_back(rule(s));
        mean += series.values.back();
    }
    mean /= static_cast<double>(series.values.size());
    const auto [lo, hi] = std::minmax_element(series.values.begin(), series.values.end());
    const double spread = *hi - *lo;
    if (std::abs(mean) < 1e-12) {
        series.absolute = true;
        series.drift = spread;
    } else {
        series.drift = spread / std::abs(mean);
    }
    return series;
}

ContourGrid contour_grid(const ModelParams& params, const NetworkConfig& cfg,
                         std::pair<int, int> dims, std::pair<double, double> x_bounds,
                         std::pair<double, double> y_bounds, int resolution,
                         std::span<const double> fixed) {
    if (resolution < 2) throw std::invalid_argument("contour_grid: resolution must be >= 2");
    if (cfg.n_c < 1) throw std::invalid_argument("contour_grid: model has no constants output");
    ContourGrid grid;
    grid.resolution = resolution;
    grid.dim_x = dims.first;
    grid.dim_y = dims.second;
    grid.x_lo = x_bounds.first;
    grid.x_hi = x_bounds.second;
    grid.y_lo = y_bounds.first;
    grid.y_hi = y_bounds.second;
    grid.values.resize(static_cast<size_t>(resolution) * resolution);

    std::vector<double> s(fixed.begin(), fixed.end());
    s.resize(static_cast<size_t>(cfg.n_s), 0.0);
    for (int iy = 0; iy < resolution; ++iy) {
        for (int ix = 0; ix < resolution; ++ix) {
            s[static_cast<size_t>(dims.first)] =
                grid.x_lo + (grid.x_hi - grid.x_lo) * ix / (resolution - 1);
            s[static_cast<size_t>(dims.second)] =
                grid.y_lo + (grid.y_hi - grid.y_lo) * iy / (resolution - 1);
            grid.values[static_cast<size_t>(iy) * resolution + ix] =
                model_constants(params, cfg, s)[0];
        }
    }
    return grid;
}

void write_contour_csv(const ContourGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("contour: cannot open '" + path + "' for writing");
    out << "x,y,c\n";
    char buf[120];
    for (int iy = 0; iy < grid.resolution; ++iy)
        for (int ix = 0; ix < grid.resolution; ++ix) {
            const double x = grid.x_lo + (grid.x_hi - grid.x_lo) * ix / (grid.resolution - 1);
            const double y = grid.y_lo + (grid.y_hi - grid.y_lo) * iy / (grid.resolution - 1);
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", x, y,
                          grid.values[static_cast<size_t>(iy) * grid.resolution + ix]);
            out << buf;
        }
}

double grid_correlation(const ContourGrid& grid,
                        const std::function<double(std::span<const double>)>& reference,
                        std::span<const double> fixed) {
    std::vector<double> ref;
    ref.reserve(grid.values.size());
    std::vector<double> s(fixed.begin(), fixed.end());
    const size_t needed = static_cast<size_t>(std::max(grid.dim_x, grid.dim_y) + 1);
    if (s.size() < needed) s.resize(needed, 0.0);
    for (int iy = 0; iy < grid.resolution; ++iy)
        for (int ix = 0; ix < grid.resolution; ++ix) {
            s[static_cast<size_t>(grid.dim_x)] =
                grid.x_lo + (grid.x_hi - grid.x_lo) * ix / (grid.resolution - 1);
            s[static_cast<size_t>(grid.dim_y)] =
                grid.y_lo + (grid.y_hi - grid.y_lo) * iy / (grid.resolution - 1);
            ref.push_back(reference(s));
        }

    const size_t n = ref.size();
    double mc = 0.0, mr = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mc += grid.values[i];
        mr += ref[i];
    }
    mc /= static_cast<double>(n);
    mr /= static_cast<double>(n);
    double num = 0.0, dc = 0.0, dr = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double a = grid.values[i] - mc;
        const double b = ref[i] - mr;
        num += a * b;
        dc += a * a;
        dr += b * b;
    }
    if (dc == 0.0 || dr == 0.0) return 0.0;
    return num / std::sqrt(dc * dr);
}

int detect_num_constants(std::span<const int> nc_values, std::span<const double> relative,
                         double threshold) {
    int detected = 0;
    for (size_t i = 0; i < nc_values.size(); ++i)
        if (relative[i] <= threshold) detected = std::max(detected, nc_values[i]);
    return detected;
}

ScanResult scan_num_constants(const SystemDef& sys, const Dataset& data, int nc_max, int n_seeds,
                              const TrainConfig& train_cfg, const NetworkConfig& net_base,
                              uint64_t seed, double jump_threshold, int jobs) {
    if (nc_max < 0 || nc_max >= sys.n_s)
        throw std::invalid_argument("scan: n_c range must lie within [0, n_s-1]");
    if (n_seeds < 1) throw std::invalid_argument("scan: n_seeds must be >= 1");

    ScanResult result;
    result.threshold = jump_threshold;
    for (int nc = 0; nc <= nc_max; ++nc) result.nc_values.push_back(nc);
    result.cells.resize(static_cast<size_t>(nc_max + 1) * static_cast<size_t>(n_seeds));

    parallel_for(static_cast<int>(result.cells.size()), jobs, [&](int idx) {
        const int nc = idx / n_seeds;
        const int seed_idx = idx % n_seeds;
        const uint64_t run_seed =
            mix_seed(seed, "scan", static_cast<uint64_t>(nc), static_cast<uint64_t>(seed_idx));

        NetworkConfig net = net_base;
        net.n_s = sys.n_s;
        net.n_f = sys.n_f;
        net.n_c = nc;

        const TrainResult p1 = train_phase1(train_cfg, net, data, run_seed);
        const TrainResult p2 =
            train_phase2(train_cfg, net, std::get<TwinNetParams>(p1.params), data, run_seed);

        const DataSplit split = split_dataset(data.samples.size(), train_cfg.val_fraction, run_seed);
        std::vector<Sample> val;
        val.reserve(split.val.size());
        for (size_t i : split.val) val.push_back(data.samples[i]);

        ScanCell cell;
        cell.n_c = nc;
        cell.seed = run_seed;
        cell.l1 = residual_L1(p2.params, net, val);
        for (const auto& rec : p2.history) cell.l1_curve.push_back(rec.val_l1);
        result.cells[static_cast<size_t>(idx)] = std::move(cell);
    });

    for (int nc = 0; nc <= nc_max; ++nc) {
        double mean = 0.0;
        for (int s = 0; s < n_seeds; ++s)
            mean += result.cells[static_cast<size_t>(nc * n_seeds + s)].l1;
        mean /= static_cast<double>(n_seeds);
        double var = 0.0;
        for (int s = 0; s < n_seeds; ++s) {
            const double d = result.cells[static_cast<size_t>(nc * n_seeds + s)].l1 - mean;
            var += d * d;
        }
        result.mean_l1.push_back(mean);
        result.std_l1.push_back(std::sqrt(var / static_cast<double>(n_seeds)));
    }
    const double base = result.mean_l1[0];
    for (double m : result.mean_l1) result.relative.push_back(m / base);
    result.detected_nc = detect_num_constants(result.nc_values, result.relative, jump_threshold);
    return result;
}

} // namespace comlab
