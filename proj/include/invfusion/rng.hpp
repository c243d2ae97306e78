#ifndef INVFUSION_RNG_HPP
#define INVFUSION_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace invfusion {

// Deterministic counter-free RNG (xoshiro256++ seeded via splitmix64).
// We roll our own normal/uniform so that sampled operators and noise are
// reproducible independent of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t z = seed;
        for (auto& si : s_) {
            z += 0x9e3779b97f4a7c15ull;
            uint64_t x = z;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
            si = x ^ (x >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next_u64() % uint64_t(hi - lo + 1));
    }

    // Standard normal via Box-Muller (one value per call, cached pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fans a master seed out to named sub-streams (data, noise, operators, ...)
// so individual pipeline stages are independently reproducible.
inline uint64_t seed_for(uint64_t master, std::string_view stream, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull ^ master;
    for (char ch : stream) {
        h ^= uint64_t(uint8_t(ch));
        h *= 0x100000001b3ull;
    }
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // final splitmix scramble
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace invfusion

#endif
