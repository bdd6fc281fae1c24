#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "clp/errors.hpp"

namespace clp {

// Deterministic random source. Built on std::mt19937_64 (whose output
// sequence is fixed by the standard) with hand-rolled uniform/normal/integer
// transforms, because the std distribution objects are implementation-defined
// and would break bit-reproducibility across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; the spare value is cached, so draws
    // come in a fixed sequence for a given seed.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n) via rejection sampling.
    int64_t below(int64_t n) {
        if (n <= 0) throw ContractError("Rng::below: n must be positive");
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<int64_t>(v % un);
    }

    // Derive an independent, reproducible stream (e.g. per epoch or shard).
    Rng fork(uint64_t stream) {
        uint64_t mixed = mix(eng_() ^ 0x9e3779b97f4a7c15ULL, stream);
        return Rng(mixed);
    }

private:
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace clp
