#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "rseq/errors.hpp"

namespace rseq {

// Seeded generator. The engine (mt19937_64) is fully specified by the
// standard, and every distribution below is computed by hand, so a given
// seed yields the same draws on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw UsageError("Rng::uniform_int: empty range");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Derives an independent stream, e.g. one per evaluation worker.
    Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

    std::string serialize() const {
        std::ostringstream os;
        os << seed_ << ' ' << engine_;
        return os.str();
    }

    static Rng deserialize(const std::string& text) {
        std::istringstream is(text);
        Rng r;
        is >> r.seed_ >> r.engine_;
        if (!is) throw UsageError("Rng::deserialize: malformed state");
        return r;
    }

    friend bool operator==(const Rng& a, const Rng& b) {
        return a.seed_ == b.seed_ && a.engine_ == b.engine_;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace rseq
