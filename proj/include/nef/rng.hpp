#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace nef {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a child key from a parent key and a stream identifier.
inline constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t id) noexcept
{
    return splitmix64(parent ^ splitmix64(id));
}

// Stateless draw: the value at position `counter` of stream `key`.
inline constexpr std::uint64_t counter_hash(std::uint64_t key, std::uint64_t counter) noexcept
{
    return splitmix64(key ^ splitmix64(counter ^ 0x5851f42d4c957f2dULL));
}

// Counter-based random stream. Every value is a pure function of (key, position),
// so streams can be recreated anywhere from their key alone.
class Stream {
public:
    explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}
    Stream(std::uint64_t seed, std::uint64_t id) noexcept : key_(derive_key(seed, id)) {}

    std::uint64_t next_u64() noexcept { return counter_hash(key_, counter_++); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (one value per call, the pair's sine half is dropped).
    double normal() noexcept
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t position() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace nef
