#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>

namespace vgold {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {
constexpr std::uint64_t mix_one(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }
constexpr std::uint64_t mix_one(std::uint64_t h, std::string_view v) { return mix_one(h, fnv1a(v)); }
constexpr std::uint64_t mix_one(std::uint64_t h, const char* v) { return mix_one(h, std::string_view(v)); }
template <class T>
    requires std::is_integral_v<T>
constexpr std::uint64_t mix_one(std::uint64_t h, T v) { return mix_one(h, static_cast<std::uint64_t>(v)); }
} // namespace detail

/// Derives an independent 64-bit stream key from a root seed and any mix of
/// string / integer tags, e.g. derive_seed(seed, "worker", worker_id, "order").
template <class... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t root, const Tags&... tags) {
    std::uint64_t h = splitmix64(root);
    ((h = detail::mix_one(h, tags)), ...);
    return h;
}

template <class... Tags>
Rng make_rng(std::uint64_t root, const Tags&... tags) {
    return Rng(derive_seed(root, tags...));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline double normal(Rng& rng, double mean, double sd) {
    if (sd <= 0.0) return mean;
    return std::normal_distribution<double>(mean, sd)(rng);
}

/// Beta draw parameterised by mean and concentration (alpha + beta).
inline double beta_mean_conc(Rng& rng, double mean, double concentration) {
    const double a = mean * concentration;
    const double b = (1.0 - mean) * concentration;
    const double x = std::gamma_distribution<double>(a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(b, 1.0)(rng);
    return x / (x + y);
}

} // namespace vgold
