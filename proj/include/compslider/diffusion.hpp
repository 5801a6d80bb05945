// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Noise schedules, forward noising and the clean-sample-predicting
// ancestral sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "compslider/common.hpp"
#include "compslider/rng.hpp"

namespace compslider {

enum class ScheduleKind { cosine, linear };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "linear"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "cosine")
        return ScheduleKind::cosine;
    if (s == "linear")
        return ScheduleKind::linear;
    throw validation_error("unknown schedule kind '" + s + "' (expected cosine|linear)", "schedule");
}

struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<double> alpha;     // index 1..T; alpha[0] = 1
    std::vector<double> alpha_bar; // index 0..T; alpha_bar[0] = 1

    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[static_cast<size_t>(t)]); }
    double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar[static_cast<size_t>(t)]); }
};

/// Cosine: squared-cosine alpha_bar with offset 0.008 and alpha_t >= 0.001.
/// Linear: beta evenly spaced from 1e-4 to 0.02.
inline NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    require(T >= 1, "schedule needs T >= 1", "T");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    if (kind == ScheduleKind::cosine) {
        constexpr double offset = 0.008;
        auto f = [&](double t) {
            double c = std::cos((t / T + offset) / (1.0 + offset) * M_PI / 2.0);
            return c * c;
        };
        for (int t = 1; t <= T; ++t) {
            double a = f(t) / f(t - 1);
            s.alpha[static_cast<size_t>(t)] = std::clamp(a, 0.001, 1.0 - 1e-12);
        }
    } else {
        for (int t = 1; t <= T; ++t) {
            double beta = T == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * (t - 1) / (T - 1);
            s.alpha[static_cast<size_t>(t)] = 1.0 - beta;
        }
    }
    for (int t = 1; t <= T; ++t)
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * s.alpha[static_cast<size_t>(t)];
    return s;
}

/// c_t = sqrt(abar_t) c0 + sqrt(1 - abar_t) z
template <typename Derived, typename DerivedZ>
auto forward_noise(const Eigen::MatrixBase<Derived>& c0, int t, const Eigen::MatrixBase<DerivedZ>& z,
                   const NoiseSchedule& sched) {
    require(t >= 0 && t <= sched.T, "timestep out of range", "t");
    require(c0.rows() == z.rows() && c0.cols() == z.cols(), "forward_noise: shape mismatch");
    using S = typename Derived::Scalar;
    const S a = static_cast<S>(sched.sqrt_alpha_bar(t));
    const S b = static_cast<S>(sched.sqrt_one_minus_alpha_bar(t));
    return (a * c0.derived() + b * z.derived()).eval();
}

struct SamplerConfig {
    int steps = 0; // 0 means the full schedule
    uint64_t noise_seed = 0;
    bool deterministic_final_step = true;
    // Re-noise with the printed sqrt(alpha_t) instead of sqrt(abar_{t-1}).
    bool literal_reverse = false;
};

/// One reverse update from t to t_prev (t_prev = t - 1 for unstrided sampling):
/// c_prev = sqrt(abar_prev) c0_pred + sqrt(1 - abar_prev) z.
template <typename Derived, typename DerivedZ>
auto reverse_step(const Eigen::MatrixBase<Derived>& c0_pred, int t, const Eigen::MatrixBase<DerivedZ>& z,
                  const NoiseSchedule& sched, int t_prev = -1, bool literal = false) {
    require(t >= 1 && t <= sched.T, "timestep out of range", "t");
    if (t_prev < 0)
        t_prev = t - 1;
    require(t_prev >= 0 && t_prev < t, "t_prev must be in [0, t)", "t_prev");
    using S = typename Derived::Scalar;
    double keep, noise;
    if (literal) {
        const double a = sched.alpha_bar[static_cast<size_t>(t)] / sched.alpha_bar[static_cast<size_t>(t_prev)];
        keep = std::sqrt(a);
        noise = std::sqrt(1.0 - a);
    } else {
        keep = sched.sqrt_alpha_bar(t_prev);
        noise = sched.sqrt_one_minus_alpha_bar(t_prev);
    }
    return (static_cast<S>(keep) * c0_pred.derived() + static_cast<S>(noise) * z.derived()).eval();
}

/// Descending timesteps visited by a sampler with `steps` evaluations.
inline std::vector<int> sampling_timesteps(const NoiseSchedule& sched, int steps) {
    if (steps <= 0)
        steps = sched.T;
    require(steps <= sched.T, "sampler steps exceed schedule length", "steps");
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i) {
        const int t = static_cast<int>(std::ceil(static_cast<double>(sched.T) * (steps - i) / steps));
        if (ts.empty() || t < ts.back())
            ts.push_back(t);
    }
    return ts;
}

/// Batched ancestral sampling. Row b has its own noise stream seeded by
/// seeds[b], so a row's result does not depend on the rest of the batch.
/// `denoise(c_t, t)` maps a (batch x dim) matrix to predicted clean samples.
template <typename S, typename Denoiser>
Mat<S> sample_batch(Denoiser&& denoise, const NoiseSchedule& sched, const SamplerConfig& cfg,
                    std::span<const uint64_t> seeds, int dim) {
    require(!seeds.empty(), "sample_batch needs at least one seed");
    const auto ts = sampling_timesteps(sched, cfg.steps);
    const auto rows = static_cast<Eigen::Index>(seeds.size());
    std::vector<Rng> streams;
    streams.reserve(seeds.size());
    for (uint64_t s : seeds)
        streams.emplace_back(s);
    auto draw = [&](Mat<S>& z) {
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < dim; ++c)
                z(r, c) = static_cast<S>(streams[static_cast<size_t>(r)].normal());
    };
    Mat<S> c(rows, dim);
    draw(c);
    Mat<S> z(rows, dim);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Mat<S> c0 = denoise(static_cast<const Mat<S>&>(c), t);
        if (!c0.allFinite())
            throw numeric_error("denoiser produced non-finite output at t=" + std::to_string(t));
        if (t_prev == 0 && cfg.deterministic_final_step) {
            c = std::move(c0);
            break;
        }
        draw(z);
        c = reverse_step(c0, t, z, sched, t_prev, cfg.literal_reverse);
    }
    return c;
}

/// Single-chain sampling from `cfg.noise_seed`.
template <typename S, typename Denoiser>
Vec<S> sample(Denoiser&& denoise, const NoiseSchedule& sched, const SamplerConfig& cfg, int dim) {
    const uint64_t seed = cfg.noise_seed;
    Mat<S> out = sample_batch<S>(std::forward<Denoiser>(denoise), sched, cfg, std::span<const uint64_t>(&seed, 1), dim);
    return out.row(0).transpose();
}

} // namespace compslider
