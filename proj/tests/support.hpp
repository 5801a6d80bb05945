// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "compslider/checkpoint.hpp"
#include "compslider/denoiser.hpp"
#include "compslider/world.hpp"

namespace testing_support {

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("compslider_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Small world for fast tests: N=3, D=16, P=3, K=4, L=4, token width 16.
inline compslider::WorldSpec small_spec(uint64_t seed = 11) {
    compslider::WorldSpec s;
    s.n_attributes = 3;
    s.latent_dim = 16;
    s.n_prompt_classes = 3;
    s.identity_dim = 4;
    s.text_len = 4;
    s.token_dim = 16;
    s.world_seed = seed;
    s.attr_correlation = compslider::default_correlation(3);
    return s;
}

inline compslider::DenoiserConfig small_model(const compslider::WorldSpec& s, int buckets = 5) {
    compslider::DenoiserConfig c;
    c.blocks = 2;
    c.dim = s.token_dim;
    c.heads = 2;
    c.n_sliders = s.n_attributes;
    c.text_len = s.text_len;
    c.latent_dim = s.latent_dim;
    c.n_buckets = buckets;
    return c;
}

/// Overwrites every tensor with N(0, scale^2) so no gradient path is blocked by zero init.
template <typename S>
void randomize(compslider::ModelParams<S>& p, uint64_t seed, double scale = 0.3) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    p.visit([&](const std::string&, compslider::Mat<S>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<S>(n(gen));
    });
}

} // namespace testing_support
