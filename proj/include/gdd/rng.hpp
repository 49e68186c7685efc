#pragma once
// Deterministic random source. One algorithm on every platform so that a seed
// pins the whole experiment: xorshift64* for the uniform stream, splitmix64
// for seed scrambling / stream derivation, Box-Muller (basic form, second
// sample cached) for normals.
#include <cstdint>
#include <cmath>
#include <stdexcept>

namespace gdd {

// splitmix64 finalizer (Vigna). Used to scramble seeds and derive substreams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stream-split rule: substream `id` of `seed` is seeded with
// splitmix64(seed + GOLDEN * (id + 1)). Documented so that independently
// written tools can reproduce the same streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) {
    return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (id + 1));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;  // xorshift state must be nonzero
    }

    // xorshift64* (Vigna 2016)
    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // modulo bias is < 2^-53 for the n used here (image dims, shape counts)
        return next_u64() % n;
    }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // N(mu, sigma^2) via Box-Muller, basic form: two uniforms give two
    // normals, the sine one is cached. sigma == 0 returns mu exactly and
    // consumes no state.
    double normal(double mu, double sigma) {
        if (sigma == 0.0) return mu;
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]: keeps log() finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mu + sigma * r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Gaussian density, the closed form behind the sampler.
inline double normal_pdf(double z, double mu, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("normal_pdf: sigma must be > 0");
    double d = (z - mu) / sigma;
    return std::exp(-0.5 * d * d) / (sigma * std::sqrt(2.0 * M_PI));
}

}  // namespace gdd
