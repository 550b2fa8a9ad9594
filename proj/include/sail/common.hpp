#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sail {

// Error taxonomy, mapped onto the CLI exit-code contract
// (2 usage/config, 3 numeric failure, 4 corrupt artifact).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct LookupError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct ArtifactError : Error {
    using Error::Error;
};

// Deterministic RNG. All stochastic choices in the pipeline (init, shuffles,
// noise fields, random orderings) go through this so runs are reproducible
// from the seed alone, independent of platform library details.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (u1 in (0,1])
    double normal() {
        const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // uniform integer in [0, n), n >= 1
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(gen_()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Mixes a stream id into a base seed so derived RNGs are decorrelated.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
    uint64_t x = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);
uint64_t fnv1a64(const std::string& s);

// Sample-level parallelism, capped by the SAIL_THREADS environment variable.
// Results must be written by index; partitioning never changes output bytes.
int max_threads();
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Locale-independent formatting ('.' decimal separator, '\n' endings are the
// caller's responsibility).
std::string fmt_g(double v, int significant = 12);

}  // namespace sail
