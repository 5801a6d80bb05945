// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>

#include "compslider/common.hpp"

namespace compslider {

inline constexpr double default_frequency_base = 10000.0;

/// Frequency shared by channels 2k and 2k+1: exp(-(k / (dim/4)) * ln f).
inline double slider_frequency(int channel, int dim, double base = default_frequency_base) {
    const int k = channel / 2;
    return std::exp(-(static_cast<double>(k) / (dim / 4)) * std::log(base));
}

/// Sinusoidal encoding of slider values: N x dim/2, cosine on even channels,
/// sine on odd channels.
template <typename S = double>
Mat<S> positional_encode(std::span<const double> values, int dim, double base = default_frequency_base) {
    require(dim > 0 && dim % 4 == 0, "slider embedding dim must be a positive multiple of 4", "dim");
    const int half = dim / 2;
    Mat<S> p(static_cast<Eigen::Index>(values.size()), half);
    for (int j = 0; j < half; ++j) {
        const double w = slider_frequency(j, dim, base);
        for (size_t i = 0; i < values.size(); ++i) {
            const double arg = values[i] * w;
            p(static_cast<Eigen::Index>(i), j) = static_cast<S>(j % 2 == 0 ? std::cos(arg) : std::sin(arg));
        }
    }
    return p;
}

template <typename S>
Mat<S> positional_encode(const Eigen::VectorXd& values, int dim, double base = default_frequency_base) {
    return positional_encode<S>(std::span<const double>(values.data(), static_cast<size_t>(values.size())), dim,
                                base);
}

/// Slider tokens [p, w]: row i is the positional row of v_i followed by class row w_i.
template <typename S>
Mat<S> slider_embed(const Mat<S>& positional, const Mat<S>& class_embedding) {
    require(positional.rows() == class_embedding.rows(), "slider_embed: attribute count mismatch");
    require(positional.cols() == class_embedding.cols(), "slider_embed: half-width mismatch");
    Mat<S> out(positional.rows(), positional.cols() * 2);
    out.leftCols(positional.cols()) = positional;
    out.rightCols(class_embedding.cols()) = class_embedding;
    return out;
}

/// Uniform bucket over [-1, 1]: min(floor((delta + 1) / 2 * B), B - 1).
inline int bucketize(double delta, int buckets) {
    require(buckets >= 2, "bucket count must be >= 2", "buckets");
    require(std::isfinite(delta) && delta >= -1.0 && delta <= 1.0, "slider difference outside [-1, 1]", "delta");
    const int idx = static_cast<int>(std::floor((delta + 1.0) / 2.0 * buckets));
    return std::min(idx, buckets - 1);
}

inline double bucket_center(int index, int buckets) {
    require(buckets >= 2, "bucket count must be >= 2", "buckets");
    require(index >= 0 && index < buckets, "bucket index out of range", "index");
    return -1.0 + static_cast<double>(2 * index + 1) / buckets;
}

} // namespace compslider
