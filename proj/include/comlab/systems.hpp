#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "comlab/dataset.hpp"
#include "comlab/rng.hpp"

namespace comlab {

/// Periodic external force F_x(t) = a0 cos(a1 t + a2); coefficients drawn
/// once per trajectory.
struct ForceCoeffs {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
};

std::vector<double> external_force(double t, const ForceCoeffs& fc);
ForceCoeffs sample_force_coeffs(Rng& rng);

/// A ground-truth dynamical system: derivative rule, true constants of
/// motion, and an initial-condition sampler over a bounded non-singular
/// regime.
struct SystemDef {
    std::string name;
    int n_s = 0;
    int n_c_true = 0;
    int n_f = 0;
    bool forced = false;
    /// (s, t, F) -> sdot
    std::function<void(std::span<const double>, double, std::span<const double>, std::span<double>)>
        derivative;
    /// s -> conserved values (n_c_true entries)
    std::function<std::vector<double>(std::span<const double>)> constants;
    std::function<std::vector<double>(Rng&)> ic_sampler;
};

const SystemDef& get_system(const std::string& name);
std::vector<std::string> system_names();

std::vector<double> derivative(const SystemDef& sys, std::span<const double> s, double t,
                               std::span<const double> F = {});
std::vector<double> true_constants(const SystemDef& sys, std::span<const double> s);

// --- integration -------------------------------------------------------------

enum class IntMethod { rk4, rk45 };

struct IntegrateOptions {
    IntMethod method = IntMethod::rk45;
    double dt = 1e-3;    // rk4 step
    double atol = 1e-9;  // rk45 tolerances
    double rtol = 1e-9;
    double h_min = 1e-12;
    double max_step = 0.0; // 0 = unrestricted
};

struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
};

using DerivFn = std::function<void(double, std::span<const double>, std::span<double>)>;

/// States at the requested output times (ascending, first = start time).
/// Throws on step underflow ("stiff or singular trajectory") or non-finite
/// states.
Trajectory integrate(const DerivFn& deriv, std::span<const double> s0,
                     std::span<const double> out_times, const IntegrateOptions& opts = {});

/// Convenience: n_points evenly spaced outputs over [t0, t1].
Trajectory integrate(const DerivFn& deriv, std::span<const double> s0, double t0, double t1,
                     int n_points, const IntegrateOptions& opts = {});

// --- data generation ----------------------------------------------------------

/// Samples n_traj initial conditions, integrates each to t_end with a
/// high-accuracy adaptive solver, takes n_points evenly spaced samples per
/// trajectory, computes the clean derivative, then adds independent
/// N(0, sigma^2) noise to both the states and the derivatives. Trajectories
/// that fail to integrate are resampled (up to 20% of the requested count).
Dataset generate_dataset(const SystemDef& sys, int n_traj, double t_end, int n_points,
                         double sigma, uint64_t seed);

} // namespace comlab
