// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace slmss {

inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256**. Compact serializable state; we avoid std distributions so
// streams are reproducible across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    // Derive an independent stream, e.g. per (seed, sample index).
    static Rng stream(uint64_t seed, uint64_t salt) {
        uint64_t x = seed ^ (0x9e3779b97f4a7c15ull + salt * 0xd1342543de82ef95ull);
        splitmix64(x);
        return Rng(splitmix64(x));
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0,n), n>0. Multiply-shift; bias is negligible for our n.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Box-Muller, one draw per call so the four state words are the whole
    // generator state (checkpoint save/load stays exact).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return r * std::cos(a);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            const uint64_t j = uniform_int(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    std::array<uint64_t, 4> save_state() const { return state_; }
    void load_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    std::array<uint64_t, 4> state_{};
};

}  // namespace slmss
