#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace camp {

// Splittable counter-based seeding. Every stochastic component derives its
// own seed from (master seed, tag, counters...) so work can be partitioned
// across threads by index without any shared RNG state.

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_in(uint64_t state, uint64_t v) {
    return splitmix64(state ^ splitmix64(v));
}

inline uint64_t hash_tag(std::string_view tag) {
    // FNV-1a, widened through splitmix for diffusion.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

}  // namespace detail

inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
    return detail::mix_in(master, detail::hash_tag(tag));
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a) {
    return detail::mix_in(derive_seed(master, tag), a);
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a, uint64_t b) {
    return detail::mix_in(derive_seed(master, tag, a), b);
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a, uint64_t b, uint64_t c) {
    return detail::mix_in(derive_seed(master, tag, a, b), c);
}

/// Deterministic RNG handle; thin wrapper so call sites never share engines.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    double normal(double mean = 0.0, double sd = 1.0) {
        std::normal_distribution<double> d(mean, sd);
        return d(engine_);
    }

    double exponential(double rate) {
        std::exponential_distribution<double> d(rate);
        return d(engine_);
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(engine_);
    }

    bool bernoulli(double p) {
        std::bernoulli_distribution d(p);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace camp
