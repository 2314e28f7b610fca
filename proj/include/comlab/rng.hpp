#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace comlab {

// All randomness in the project flows from a single root seed through named
// substreams (init / noise / split / rollout / ...), so that every component
// is deterministic in isolation and reruns are bit-identical.
uint64_t mix_seed(uint64_t root, std::string_view tag, uint64_t a = 0, uint64_t b = 0);

// mt19937_64 with explicit uniform/normal mappings. The distributions are
// implemented here (not via std::*_distribution) so the byte-level output is
// stable across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the second value of each pair is cached.
    double normal(double mean = 0.0, double stddev = 1.0);

    // [0, n), n >= 1, rejection-sampled to avoid modulo bias
    uint64_t uniform_index(uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace comlab
