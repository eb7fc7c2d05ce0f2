#pragma once

#include <cstdint>
#include <string_view>

namespace scf {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

/// Stateless generator: every draw is a pure function of (seed, stream,
/// counter), so results do not depend on evaluation order or thread count.
class CounterRng {
public:
    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ull))) {}

    /// Stream keyed by a tensor name and a parent index.
    static constexpr CounterRng for_tensor(std::uint64_t seed, std::string_view name, std::uint64_t parent = 0) noexcept {
        return CounterRng(seed, fnv1a64(name) ^ mix64(parent));
    }

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept { return mix64(key_ ^ mix64(counter)); }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double uniform(std::uint64_t counter) const noexcept {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
};

}  // namespace scf
