#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace ptransfer {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Derives a stage seed from the master seed. Stage tags are fixed constants,
// so every pipeline stage gets an independent stream from one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stage) {
    return splitmix64(master ^ splitmix64(stage));
}

// Deterministic random source. All sampling goes through this class so the
// sequence of draws is the same on every platform we build for.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // unbiased uniform integer in [0, n)
    std::size_t uniform_below(std::size_t n) {
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() / un * un;
        std::uint64_t r = gen_();
        while (r >= limit) r = gen_();
        return static_cast<std::size_t>(r % un);
    }

    // Box-Muller without caching the second value: two draws per normal,
    // keeps the draw count per call fixed.
    double normal() {
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices out of [0, n), in draw order
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + uniform_below(n - i);
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace ptransfer
