#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace comlab {

/// One observation: noisy state, noisy state derivative, optional external
/// force at the sample time.
struct Sample {
    std::vector<double> s;
    std::vector<double> sdot;
    std::vector<double> F;
    double t = 0.0;
};

struct Dataset {
    std::string system;
    double sigma = 0.0;
    uint64_t seed = 0;
    int n_s = 0;
    int n_f = 0;
    std::vector<Sample> samples;
};

/// Structured-text header (system, sigma, seed, counts) followed by a CSV
/// body with columns t, s_0.., sdot_0.., F_0... Deterministic byte-for-byte
/// for identical inputs.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

} // namespace comlab
