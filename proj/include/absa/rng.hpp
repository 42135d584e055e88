#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace absa {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Seed of a named stream: splitmix64(master XOR fnv1a64(name)).
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name) {
    return splitmix64(master ^ fnv1a64(name));
}

/// The independent generators one training run consumes. Each is seeded
/// from the master seed and its own name, so drawing from one never shifts
/// another.
struct SeedStreams {
    std::mt19937_64 init;
    std::mt19937_64 shuffle;
    std::mt19937_64 dropout;

    explicit SeedStreams(std::uint64_t master)
        : init(stream_seed(master, "init")),
          shuffle(stream_seed(master, "shuffle")),
          dropout(stream_seed(master, "dropout")) {}
};

inline SeedStreams set_seed(std::uint64_t master) { return SeedStreams(master); }

}  // namespace absa
