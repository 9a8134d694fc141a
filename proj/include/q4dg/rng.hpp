#pragma once

#include <cstdint>
#include <random>

namespace q4dg {

// Deterministic RNG wrapper. All randomness in the project flows through an
// explicit Rng so every pipeline stage is reproducible from its seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    // Inclusive bounds.
    std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(eng_);
    }
    // Derives an independent child stream; used for per-scene / per-step seeds.
    Rng fork(std::uint64_t salt) {
        return Rng(eng_() ^ (salt * 0x9e3779b97f4a7c15ULL));
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

}  // namespace q4dg
