#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "admc/hash.hpp"

namespace admc::rng {

inline constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Counter-based stream: value at counter c is mix64(key + c*gamma), i.e. the
// SplitMix64 sequence with initial state `key`. Any draw is addressable by
// (key, counter), so generation order never affects values.
class Stream {
public:
    explicit Stream(uint64_t key) : key_(key) {}

    uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

    // [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n > 0. Lemire multiply-shift.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; pairs are cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log() is finite.
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void fill_normal(T* out, size_t n) {
        for (size_t i = 0; i < n; ++i) out[i] = static_cast<T>(next_normal());
    }

    template <typename T>
    void fill_uniform(T* out, size_t n, double lo, double hi) {
        for (size_t i = 0; i < n; ++i)
            out[i] = static_cast<T>(lo + (hi - lo) * next_double());
    }

    template <typename V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Hierarchical key: seed -> named/numbered substreams. Children derived from
// distinct (parent, word) pairs are statistically independent.
class Key {
public:
    explicit Key(uint64_t v) : v_(v) {}

    Key child(uint64_t word) const { return Key(mix64(v_ + kGamma * (word + 1))); }
    Key child(std::string_view tag) const { return child(fnv1a64(tag.data(), tag.size())); }

    Stream stream() const { return Stream(v_); }
    uint64_t value() const { return v_; }

private:
    uint64_t v_;
};

} // namespace admc::rng
