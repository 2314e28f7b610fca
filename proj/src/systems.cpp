#include "comlab/systems.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace comlab {

std::vector<double> external_force(double t, const ForceCoeffs& fc) {
    return {fc.a0 * std::cos(fc.a1 * t + fc.a2)};
}

ForceCoeffs sample_force_coeffs(Rng& rng) {
    ForceCoeffs fc;
    fc.a0 = rng.uniform(-0.5, 0.5);
    fc.a1 = rng.uniform(0.0, 5.0);
    fc.a2 = rng.uniform(0.0, 2.0 * M_PI);
    return fc;
}

namespace {

constexpr double kGravity = 1.0;
constexpr double kDamping = 0.1;

// Pendulum in Cartesian coordinates, constrained to the unit circle by the
// tension term lambda * q. With damping gamma and a horizontal force F_x the
// multiplier keeps q.v invariant along the flow:
//   lambda = (v.v - g y + x F_x - gamma q.v) / (q.q)
void pendulum_rhs(std::span<const double> s, double fx, double gamma, std::span<double> out) {
    const double x = s[0], y = s[1], vx = s[2], vy = s[3];
    const double qq = x * x + y * y;
    const double lambda = (vx * vx + vy * vy - kGravity * y + x * fx - gamma * (x * vx + y * vy)) / qq;
    out[0] = vx;
    out[1] = vy;
    out[2] = fx - lambda * x - gamma * vx;
    out[3] = -kGravity - lambda * y - gamma * vy;
}

std::vector<double> pendulum_ic(Rng& rng) {
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double omega = rng.uniform(-0.5, 0.5);
    // on the unit circle with tangential velocity
    return {std::cos(phi), std::sin(phi), -omega * std::sin(phi), omega * std::cos(phi)};
}

std::vector<double> pendulum_constants(std::span<const double> s) {
    const double x = s[0], y = s[1], vx = s[2], vy = s[3];
    const double energy = 0.5 * (vx * vx + vy * vy) + kGravity * (y + 1.0);
    const double length = x * x + y * y;
    const double radial_velocity = x * vx + y * vy; // position-velocity alignment
    return {energy, length, radial_velocity};
}

void two_body_rhs(std::span<const double> s, std::span<double> out) {
    const double dx = s[0] - s[2], dy = s[1] - s[3];
    const double r2 = dx * dx + dy * dy;
    const double r = std::sqrt(r2);
    if (r < 1e-8) throw std::runtime_error("two-body: separation below 1e-8 (collision)");
    const double inv_r3 = 1.0 / (r2 * r);
    out[0] = s[4];
    out[1] = s[5];
    out[2] = s[6];
    out[3] = s[7];
    out[4] = -dx * inv_r3; // body 1 pulled toward body 2
    out[5] = -dy * inv_r3;
    out[6] = dx * inv_r3;
    out[7] = dy * inv_r3;
}

std::vector<double> two_body_constants(std::span<const double> s) {
    const double x1 = s[0], y1 = s[1], x2 = s[2], y2 = s[3];
    const double vx1 = s[4], vy1 = s[5], vx2 = s[6], vy2 = s[7];
    const double dx = x1 - x2, dy = y1 - y2;
    const double r = std::sqrt(dx * dx + dy * dy);
    const double energy = 0.5 * (vx1 * vx1 + vy1 * vy1 + vx2 * vx2 + vy2 * vy2) - 1.0 / r;
    const double px = vx1 + vx2;
    const double py = vy1 + vy2;
    const double l_total = x1 * vy1 - y1 * vx1 + x2 * vy2 - y2 * vx2;
    // relative motion is Keplerian with mu = 2: its angular momentum and both
    // Laplace-Runge-Lenz components are conserved
    const double rvx = vx1 - vx2, rvy = vy1 - vy2;
    const double l_rel = dx * rvy - dy * rvx;
    const double mu = 2.0;
    const double ax = rvy * l_rel - mu * dx / r;
    const double ay = -rvx * l_rel - mu * dy / r;
    return {energy, px, py, l_total, l_rel, ax, ay};
}

std::vector<double> two_body_ic(Rng& rng) {
    const double r0 = rng.uniform(0.75, 1.5);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double ecc = rng.uniform(0.0, 0.4);
    const double direction = rng.uniform01() < 0.5 ? 1.0 : -1.0;
    // relative Kepler problem with mu = 2, launched tangentially at perigee
    const double speed = direction * std::sqrt((2.0 / r0) * (1.0 + ecc));
    const double qx = r0 * std::cos(theta), qy = r0 * std::sin(theta);
    const double vx = -speed * std::sin(theta), vy = speed * std::cos(theta);
    // center of mass at rest at the origin
    return {qx / 2, qy / 2, -qx / 2, -qy / 2, vx / 2, vy / 2, -vx / 2, -vy / 2};
}

std::map<std::string, SystemDef> make_registry() {
    std::map<std::string, SystemDef> reg;

    {
        SystemDef sys;
        sys.name = "mass-spring";
        sys.n_s = 2;
        sys.n_c_true = 1;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) {
            out[0] = s[1];
            out[1] = -s[0];
        };
        sys.constants = [](std::span<const double> s) {
            return std::vector<double>{0.5 * (s[0] * s[0] + s[1] * s[1])};
        };
        sys.ic_sampler = [](Rng& rng) {
            return std::vector<double>{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        };
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "2d-pendulum";
        sys.n_s = 4;
        sys.n_c_true = 3;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) { pendulum_rhs(s, 0.0, 0.0, out); };
        sys.constants = pendulum_constants;
        sys.ic_sampler = pendulum_ic;
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "damped-pendulum";
        sys.n_s = 4;
        sys.n_c_true = 2;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) { pendulum_rhs(s, 0.0, kDamping, out); };
        // energy decays; the geometric invariants survive the dissipation
        sys.constants = [](std::span<const double> s) {
            const auto all = pendulum_constants(s);
            return std::vector<double>{all[1], all[2]};
        };
        sys.ic_sampler = pendulum_ic;
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "forced-2d-pendulum";
        sys.n_s = 4;
        sys.n_c_true = 2;
        sys.n_f = 1;
        sys.forced = true;
        sys.derivative = [](std::span<const double> s, double, std::span<const double> F,
                            std::span<double> out) {
            pendulum_rhs(s, F.empty() ? 0.0 : F[0], 0.0, out);
        };
        sys.constants = [](std::span<const double> s) {
            const auto all = pendulum_constants(s);
            return std::vector<double>{all[1], all[2]};
        };
        sys.ic_sampler = pendulum_ic;
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "two-body";
        sys.n_s = 8;
        sys.n_c_true = 7;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) { two_body_rhs(s, out); };
        sys.constants = two_body_constants;
        sys.ic_sampler = two_body_ic;
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "nonlinear-spring-2d";
        sys.n_s = 4;
        sys.n_c_true = 2;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) {
            const double q2 = s[0] * s[0] + s[1] * s[1];
            out[0] = s[2];
            out[1] = s[3];
            out[2] = -q2 * s[0];
            out[3] = -q2 * s[1];
        };
        sys.constants = [](std::span<const double> s) {
            const double q2 = s[0] * s[0] + s[1] * s[1];
            const double energy = 0.5 * (s[2] * s[2] + s[3] * s[3]) + 0.25 * q2 * q2;
            const double ang_mom = s[0] * s[3] - s[1] * s[2];
            return std::vector<double>{energy, ang_mom};
        };
        sys.ic_sampler = [](Rng& rng) {
            return std::vector<double>{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                       rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        };
        reg[sys.name] = sys;
    }

    {
        SystemDef sys;
        sys.name = "lotka-volterra";
        sys.n_s = 2;
        sys.n_c_true = 1;
        sys.derivative = [](std::span<const double> s, double, std::span<const double>,
                            std::span<double> out) {
            out[0] = s[0] - s[0] * s[1];
            out[1] = s[0] * s[1] - s[1];
        };
        sys.constants = [](std::span<const double> s) {
            return std::vector<double>{s[0] + s[1] - std::log(s[0]) - std::log(s[1])};
        };
        sys.ic_sampler = [](Rng& rng) {
            return std::vector<double>{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        };
        reg[sys.name] = sys;
    }

    return reg;
}

const std::map<std::string, SystemDef>& registry() {
    static const std::map<std::string, SystemDef> reg = make_registry();
    return reg;
}

} // namespace

const SystemDef& get_system(const std::string& name) {
    const auto& reg = registry();
    const auto it = reg.find(name);
    if (it == reg.end()) {
        std::string names;
        for (const auto& [k, v] : reg) names += (names.empty() ? "" : ", ") + k;
        throw std::invalid_argument("unknown system '" + name + "' (valid: " + names + ")");
    }
    return it->second;
}

std::vector<std::string> system_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : registry()) names.push_back(k);
    return names;
}

std::vector<double> derivative(const SystemDef& sys, std::span<const double> s, double t,
                               std::span<const double> F) {
    if (static_cast<int>(s.size()) != sys.n_s)
        throw std::invalid_argument(sys.name + ": state has " + std::to_string(s.size()) +
                                    " entries, expected " + std::to_string(sys.n_s));
    std::vector<double> out(static_cast<size_t>(sys.n_s));
    sys.derivative(s, t, F, out);
    return out;
}

std::vector<double> true_constants(const SystemDef& sys, std::span<const double> s) {
    if (static_cast<int>(s.size()) != sys.n_s)
        throw std::invalid_argument(sys.name + ": state has " + std::to_string(s.size()) +
                                    " entries, expected " + std::to_string(sys.n_s));
    return sys.constants(s);
}

// --- integration -------------------------------------------------------------

namespace {

void check_finite(std::span<const double> s) {
    for (double x : s)
        if (!std::isfinite(x)) throw std::runtime_error("integrate: non-finite state");
}

void rk4_step(const DerivFn& deriv, double t, double h, std::vector<double>& y,
              std::vector<std::vector<double>>& work) {
    const size_t n = y.size();
    auto& k1 = work[0];
    auto& k2 = work[1];
    auto& k3 = work[2];
    auto& k4 = work[3];
    auto& tmp = work[4];
    deriv(t, y, k1);
    for (size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    deriv(t + 0.5 * h, tmp, k2);
    for (size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    deriv(t + 0.5 * h, tmp, k3);
    for (size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
    deriv(t + h, tmp, k4);
    for (size_t i = 0; i < n; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
}

// Dormand-Prince 5(4) pair
struct Dopri5 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

class Rk45Stepper {
public:
    Rk45Stepper(const DerivFn& deriv, std::span<const double> y0, double t0,
                const IntegrateOptions& opts)
        : deriv_(deriv), opts_(opts), t_(t0), y_(y0.begin(), y0.end()) {
        const size_t n = y_.size();
        for (auto& k : k_) k.resize(n);
        y_new_.resize(n);
        deriv_(t_, y_, k_[0]); // FSAL seed
        h_ = initial_step();
    }

    double time() const { return t_; }
    const std::vector<double>& state() const { return y_; }

    /// Advance exactly to t_target (t_target > t_).
    void advance_to(double t_target) {
        const double snap = 1e-14 * std::max(1.0, std::abs(t_target));
        while (t_ < t_target) {
            if (t_target - t_ < snap) {
                t_ = t_target;
                break;
            }
            double h = std::min(h_, t_target - t_);
            if (opts_.max_step > 0.0) h = std::min(h, opts_.max_step);
            try_step(h);
        }
    }

private:
    double initial_step() const {
        double scale = 0.0;
        for (size_t i = 0; i < y_.size(); ++i)
            scale = std::max(scale, std::abs(k_[0][i]) / (opts_.atol + opts_.rtol * std::abs(y_[i])));
        double h = scale > 0.0 ? 0.01 / scale : 1e-3;
        if (opts_.max_step > 0.0) h = std::min(h, opts_.max_step);
        return h;
    }

    // One attempted step of size h; on acceptance t_/y_ advance and h_ holds
    // the proposal for the next step, on rejection h_ shrinks. Returns accept.
    bool try_step(double h) {
        using D = Dopri5;
        const size_t n = y_.size();
        auto stage = [&](std::span<const double> coeffs, int n_stages, double c) {
            for (size_t i = 0; i < n; ++i) {
                double acc = y_[i];
                for (int j = 0; j < n_stages; ++j) acc += h * coeffs[static_cast<size_t>(j)] * k_[static_cast<size_t>(j)][i];
                y_new_[i] = acc;
            }
            check_finite(y_new_);
            deriv_(t_ + c * h, y_new_, k_[static_cast<size_t>(n_stages)]);
        };
        const double s2[] = {D::a21};
        const double s3[] = {D::a31, D::a32};
        const double s4[] = {D::a41, D::a42, D::a43};
        const double s5[] = {D::a51, D::a52, D::a53, D::a54};
        const double s6[] = {D::a61, D::a62, D::a63, D::a64, D::a65};
        stage(s2, 1, D::c2);
        stage(s3, 2, D::c3);
        stage(s4, 3, D::c4);
        stage(s5, 4, D::c5);
        stage(s6, 5, 1.0);
        // 5th-order solution (b7 = 0), then FSAL stage at the new point
        for (size_t i = 0; i < n; ++i)
            y_new_[i] = y_[i] + h * (D::b1 * k_[0][i] + D::b3 * k_[2][i] + D::b4 * k_[3][i] +
                                     D::b5 * k_[4][i] + D::b6 * k_[5][i]);
        check_finite(y_new_);
        deriv_(t_ + h, y_new_, k_[6]);

        double err_norm = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double e = h * (D::e1 * k_[0][i] + D::e3 * k_[2][i] + D::e4 * k_[3][i] +
                                  D::e5 * k_[4][i] + D::e6 * k_[5][i] + D::e7 * k_[6][i]);
            const double tol = opts_.atol + opts_.rtol * std::max(std::abs(y_[i]), std::abs(y_new_[i]));
            err_norm += (e / tol) * (e / tol);
        }
        err_norm = std::sqrt(err_norm / static_cast<double>(n));

        const double safety = 0.9;
        if (err_norm <= 1.0) {
            t_ += h;
            std::swap(y_, y_new_);
            std::swap(k_[0], k_[6]); // FSAL
            const double grow = err_norm > 0.0 ? safety * std::pow(err_norm, -0.2) : 5.0;
            h_ = h * std::min(5.0, std::max(0.2, grow));
            return true;
        }
        h_ = h * std::max(0.2, safety * std::pow(err_norm, -0.2));
        if (h_ < opts_.h_min) throw std::runtime_error("integrate: stiff or singular trajectory");
        return false;
    }

    const DerivFn& deriv_;
    IntegrateOptions opts_;
    double t_;
    double h_ = 1e-3;
    std::vector<double> y_, y_new_;
    std::array<std::vector<double>, 7> k_;
};

} // namespace

Trajectory integrate(const DerivFn& deriv, std::span<const double> s0,
                     std::span<const double> out_times, const IntegrateOptions& opts) {
    if (out_times.empty()) throw std::invalid_argument("integrate: no output times");
    check_finite(s0);
    for (size_t i = 1; i < out_times.size(); ++i)
        if (out_times[i] <= out_times[i - 1])
            throw std::invalid_argument("integrate: output times must be increasing");

    Trajectory traj;
    traj.times.assign(out_times.begin(), out_times.end());
    traj.states.reserve(out_times.size());

    if (opts.method == IntMethod::rk4) {
        std::vector<double> y(s0.begin(), s0.end());
        std::vector<std::vector<double>> work(5, std::vector<double>(y.size()));
        double t = out_times[0];
        traj.states.push_back(y);
        for (size_t i = 1; i < out_times.size(); ++i) {
            const double span = out_times[i] - t;
            const int n_sub = std::max(1, static_cast<int>(std::ceil(span / opts.dt - 1e-12)));
            const double h = span / n_sub;
            for (int k = 0; k < n_sub; ++k) rk4_step(deriv, t + k * h, h, y, work);
            check_finite(y);
            t = out_times[i];
            traj.states.push_back(y);
        }
        return traj;
    }

    Rk45Stepper stepper(deriv, s0, out_times[0], opts);
    traj.states.push_back(stepper.state());
    for (size_t i = 1; i < out_times.size(); ++i) {
        stepper.advance_to(out_times[i]);
        traj.states.push_back(stepper.state());
    }
    return traj;
}

Trajectory integrate(const DerivFn& deriv, std::span<const double> s0, double t0, double t1,
                     int n_points, const IntegrateOptions& opts) {
    if (n_points < 2) throw std::invalid_argument("integrate: need at least 2 output points");
    std::vector<double> times(static_cast<size_t>(n_points));
    for (int i = 0; i < n_points; ++i)
        times[static_cast<size_t>(i)] = t0 + (t1 - t0) * i / (n_points - 1);
    return integrate(deriv, s0, times, opts);
}

// --- data generation ----------------------------------------------------------

Dataset generate_dataset(const SystemDef& sys, int n_traj, double t_end, int n_points,
                         double sigma, uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("generate_dataset: sigma must be >= 0");
    if (n_traj < 1 || n_points < 2)
        throw std::invalid_argument("generate_dataset: need n_traj >= 1 and n_points >= 2");

    Dataset ds;
    ds.system = sys.name;
    ds.sigma = sigma;
    ds.seed = seed;
    ds.n_s = sys.n_s;
    ds.n_f = sys.n_f;
    ds.samples.reserve(static_cast<size_t>(n_traj) * n_points);

    const int max_failures = static_cast<int>(std::ceil(0.2 * n_traj));
    int failures = 0;

    for (int traj_idx = 0, produced = 0; produced < n_traj; ++traj_idx) {
        Rng rng(mix_seed(seed, "traj", static_cast<uint64_t>(traj_idx)));
        const auto ic = sys.ic_sampler(rng);
        ForceCoeffs fc;
        if (sys.forced) fc = sample_force_coeffs(rng);

        const DerivFn rhs = [&](double t, std::span<const double> s, std::span<double> out) {
            const auto F = sys.forced ? external_force(t, fc) : std::vector<double>{};
            sys.derivative(s, t, F, out);
        };

        Trajectory traj;
        try {
            traj = integrate(rhs, ic, 0.0, t_end, n_points);
        } catch (const std::exception&) {
            if (++failures > max_failures)
                throw std::runtime_error("generate_dataset: more than 20% of trajectories failed (" +
                                         std::to_string(failures) + " failures)");
            continue; // resample with the next trajectory stream
        }

        for (int j = 0; j < n_points; ++j) {
            Sample sample;
            sample.t = traj.times[static_cast<size_t>(j)];
            sample.s = traj.states[static_cast<size_t>(j)];
            if (sys.forced) sample.F = external_force(sample.t, fc);
            sample.sdot = derivative(sys, sample.s, sample.t, sample.F);
            if (sigma > 0.0) {
                for (double& x : sample.s) x += rng.normal(0.0, sigma);
                for (double& x : sample.sdot) x += rng.normal(0.0, sigma);
            }
            ds.samples.push_back(std::move(sample));
        }
        ++produced;
    }
    return ds;
}

} // namespace comlab
