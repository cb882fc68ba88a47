#pragma once

#include <cstdint>

namespace indmap {

// xoshiro256** with splitmix64 seeding. Streams are derived from
// (seed, stream) pairs so parallel workers can draw independently and
// reproducibly; the same pair always yields the same sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        for (auto& w : s_) w = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t s_[4];
};

// Additive low-discrepancy sequence (golden ratio rotation); deterministic
// sample grids for estimators that the spec pins to low-discrepancy sampling.
class GoldenSequence {
public:
    explicit GoldenSequence(double start = 0.0) : x_(start) {}
    double next() {
        x_ += 0.6180339887498949;
        if (x_ >= 1.0) x_ -= 1.0;
        return x_;
    }

private:
    double x_;
};

} // namespace indmap
