#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace tiadc {

/// Purpose tags keep independent random draws apart for the same channel.
enum class StreamTag : std::uint64_t {
    jitter = 1,
    offset = 2,
    gain = 3,
    timing = 4,
    cutoff = 5,
    trial = 6,
    signal = 7,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Order-sensitive hash of a seed and a list of stream coordinates.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept {
    std::uint64_t h = detail::splitmix64(seed);
    for (std::uint64_t c : coords) {
        h = detail::splitmix64(h ^ detail::splitmix64(c + 0x632be59bd9b4e019ULL));
    }
    return h;
}

/// Seeded Gaussian/uniform stream. Draws are reproducible for a fixed seed.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    RngStream(std::uint64_t seed, std::uint64_t channel, StreamTag tag)
        : engine_(derive_seed(seed, {channel, static_cast<std::uint64_t>(tag)})) {}

    double standard_normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace tiadc
