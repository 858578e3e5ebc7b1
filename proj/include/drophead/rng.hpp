#pragma once

#include <cstdint>
#include <cmath>

namespace drophead {

// Identifies one random stream. Every stochastic decision in a run is keyed
// by (seed, site, step, example, tag) so results never depend on call order.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t site = 0;
    std::uint64_t step = 0;
    std::uint64_t example = 0;
    std::uint64_t tag = 0;
};

namespace stream_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t drophead = 2;
inline constexpr std::uint64_t attn_dropout = 3;
inline constexpr std::uint64_t ff_dropout = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t dataset = 6;
}  // namespace stream_tag

// Counter-based generator: splitmix64 over key ^ f(counter). Unlike the
// std:: distributions, every draw is bit-identical across platforms.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(const StreamKey& key) : key_(mix_key(key)) {}
    RngStream(std::uint64_t seed, std::uint64_t site, std::uint64_t step = 0,
              std::uint64_t example = 0, std::uint64_t tag = 0)
        : RngStream(StreamKey{seed, site, step, example, tag}) {}

    std::uint64_t next_u64() {
        std::uint64_t z = key_ + 0x9e3779b97f4a7c15ull * ++counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool next_bernoulli(double p) { return next_double() < p; }

    // Box-Muller; second value cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    static std::uint64_t mix_key(const StreamKey& k) {
        std::uint64_t h = 0x6a09e667f3bcc909ull;
        for (std::uint64_t v : {k.seed, k.site, k.step, k.example, k.tag}) {
            h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            h *= 0xff51afd7ed558ccdull;
            h ^= h >> 33;
        }
        return h;
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace drophead
