#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace cnf {

/// Deterministic pseudo-random generator (xoshiro256++). The standard
/// library distributions are implementation-defined, so all sampling is
/// done here explicitly: identical seeds give identical streams on every
/// platform, and the 4-word state serializes into checkpoints.
class Rng {
public:
    using state_type = std::array<std::uint64_t, 4>;

    explicit Rng(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the full state
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            word = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 bits of randomness.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Fisher-Yates shuffle with a fixed traversal order.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    state_type state() const { return state_; }
    void set_state(const state_type& s) {
        state_ = s;
        has_spare_ = false;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    state_type state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Van der Corput radical inverse, the building block of Halton points.
inline double radical_inverse(std::uint64_t index, std::uint64_t base) {
    double inv_base = 1.0 / static_cast<double>(base);
    double factor = inv_base;
    double value = 0.0;
    while (index > 0) {
        value += static_cast<double>(index % base) * factor;
        index /= base;
        factor *= inv_base;
    }
    return value;
}

/// d-dimensional Halton point with a Cranley-Patterson rotation; `shift`
/// holds one offset per dimension so the sequence is scrambled but still
/// low-discrepancy.
inline std::vector<double> halton_point(std::uint64_t index,
                                        const std::vector<double>& shift) {
    static constexpr std::uint64_t primes[] = {2,  3,  5,  7,  11, 13, 17, 19,
                                               23, 29, 31, 37, 41, 43, 47, 53};
    std::vector<double> p(shift.size());
    for (std::size_t d = 0; d < shift.size(); ++d) {
        const std::uint64_t base = primes[d % (sizeof(primes) / sizeof(primes[0]))];
        double v = radical_inverse(index + 1, base) + shift[d];
        p[d] = v - std::floor(v);
    }
    return p;
}

} // namespace cnf
