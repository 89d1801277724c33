#pragma once
// Stable, platform-independent hashing and seed mixing.

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace codetool {

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Order-sensitive combination of seed components.
inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <class... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
    return mix_seed(splitmix64(seed ^ splitmix64(next)), static_cast<std::uint64_t>(rest)...);
}

// Hash of a committed code prefix. Each code text is length-prefixed so that
// ["ab","c"] and ["a","bc"] hash differently.
inline std::string prefix_hash(const std::vector<std::string>& codes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& c : codes) {
        h = fnv1a64(std::to_string(c.size()), h);
        h = fnv1a64(":", h);
        h = fnv1a64(c, h);
    }
    return hex64(h);
}

}  // namespace codetool
