// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace compslider {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Independent stream seed derived from a base seed and a path of stream ids.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> path) {
    uint64_t s = splitmix64(base);
    for (uint64_t p : path)
        s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ull));
    return s;
}

/// Seeded generator. Distributions are owned here so a given seed always
/// produces the same sequence within one standard library build.
class Rng {
public:
    explicit Rng(uint64_t seed) : m_engine(seed) {}

    double normal() { return m_normal(m_engine); }
    double uniform() { return m_uniform(m_engine); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    uint64_t index(uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(m_engine); }
    uint64_t next_u64() { return m_engine(); }

    std::mt19937_64& engine() { return m_engine; }

private:
    std::mt19937_64 m_engine;
    std::normal_distribution<double> m_normal{0.0, 1.0};
    std::uniform_real_distribution<double> m_uniform{0.0, 1.0};
};

} // namespace compslider
