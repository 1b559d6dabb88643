#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace feddisc {

// splitmix64 finalizer, used to mix seeds and derive independent substreams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix64(seed ^ mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return mix64(derive_seed(seed, tag) ^ mix64(index + 0x51ed2701ULL));
}

// Tags keep substreams for different roles disjoint under one experiment seed.
namespace stream {
inline constexpr std::uint64_t category_means = 1;
inline constexpr std::uint64_t domain_offsets = 2;
inline constexpr std::uint64_t samples = 3;
inline constexpr std::uint64_t featurizer = 4;
inline constexpr std::uint64_t upload = 5;
inline constexpr std::uint64_t plan = 6;
inline constexpr std::uint64_t generate = 7;
inline constexpr std::uint64_t finetune = 8;
inline constexpr std::uint64_t pretrain = 9;
inline constexpr std::uint64_t noise = 10;
}  // namespace stream

// Seeded splitmix64 generator with a fixed normal transform (Box-Muller, no
// cached spare) so a stream's output depends only on its seed and call
// sequence. Construction is a single word write, cheap enough for
// per-sample streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double normal() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::vector<double> normal_vector(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % n;
    }

private:
    std::uint64_t state_;
};

}  // namespace feddisc
