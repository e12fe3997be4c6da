#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace jmvl {

// seed-stream tags shared by training and evaluation
inline constexpr std::uint64_t kTagShuffle = 0x5348;
inline constexpr std::uint64_t kTagBinarize = 0x4249;
inline constexpr std::uint64_t kTagNoise = 0x4e4f;
inline constexpr std::uint64_t kTagEval = 0x4556;
inline constexpr std::uint64_t kTagEvalBin = 0x4542;

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a tag path.
/// Used to give every epoch / item / purpose its own reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = seed;
    for (std::uint64_t t : tags) {
        s ^= splitmix64(t) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

/// Deterministic RNG with portable output transforms. mt19937_64's sequence is
/// pinned by the standard; the uniform/normal transforms below avoid the
/// library-defined std::*_distribution, whose output differs between stdlibs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the paired draw.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void fill_normal(std::vector<T>& out) {
        for (auto& v : out) v = static_cast<T>(normal());
    }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace jmvl
