// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace compslider {

// Row-major storage keeps token sequences contiguous per row.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Invalid input at an API boundary (bad shapes, out-of-range values, bad config).
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& what, std::string field = {})
        : std::runtime_error(what), m_field(std::move(field)) {}
    const std::string& field() const noexcept { return m_field; }

private:
    std::string m_field;
};

/// File system or format failure.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or another numeric breakdown.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what, std::string field = {}) {
    if (!cond)
        throw validation_error(what, std::move(field));
}

/// 64-bit FNV-1a.
class Fnv1a {
public:
    static constexpr uint64_t offset_basis = 14695981039346656037ull;
    static constexpr uint64_t prime = 1099511628211ull;

    void update(const void* data, size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < size; ++i) {
            m_state ^= bytes[i];
            m_state *= prime;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    uint64_t digest() const { return m_state; }

private:
    uint64_t m_state = offset_basis;
};

inline uint64_t fnv1a(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.digest();
}

inline std::string hex64(uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4)
        out[static_cast<size_t>(i)] = digits[v & 0xf];
    return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

} // namespace compslider
