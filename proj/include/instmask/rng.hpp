#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace instmask {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives an independent sub-seed; streams never share state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
{
    return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

// Stream ids. Each consumer of randomness owns one.
enum class Stream : std::uint64_t {
    text_embedding = 1,
    projections = 2,
    trajectory_init = 3,
    trajectory_z = 4,
    trajectory_y = 5,
    inpaint_init = 6,
    inpaint_z = 7,
    inpaint_y = 8,
    scene = 9,
};

// Standard-normal sample stream.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
    NormalStream(std::uint64_t seed, Stream stream, std::uint64_t index = 0)
        : engine_(derive_seed(seed, static_cast<std::uint64_t>(stream), index))
    {
    }

    double next() { return dist_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace instmask
