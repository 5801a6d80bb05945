// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Slider-conditioned generation from a trained checkpoint.

#include <cstdint>
#include <span>
#include <vector>

#include "compslider/checkpoint.hpp"
#include "compslider/denoiser.hpp"
#include "compslider/diffusion.hpp"
#include "compslider/world.hpp"

namespace compslider {

class Generator {
public:
    /// Both references must outlive the generator.
    Generator(const Checkpoint& ck, const World& world) : m_ck(ck), m_world(world), m_sched(ck.diffusion.schedule()) {
        require(ck.spec_hash == world.hash, "checkpoint world hash " + hex64(ck.spec_hash) +
                                                " does not match world " + hex64(world.hash),
                "spec_hash");
        const auto& c = ck.params.cfg;
        require(c.n_sliders == world.n_attributes() && c.latent_dim == world.latent_dim() &&
                    c.text_len == world.spec.text_len && c.dim == world.spec.token_dim,
                "checkpoint dimensions do not match the world");
    }

    const Checkpoint& checkpoint() const { return m_ck; }
    const World& world() const { return m_world; }
    const NoiseSchedule& schedule() const { return m_sched; }

    /// One latent per slider row; row i is sampled with its own seed stream seeds[i].
    /// `steps` <= 0 uses the full schedule.
    Eigen::MatrixXd generate(int prompt_class, const std::vector<Eigen::VectorXd>& sliders,
                             std::span<const uint64_t> seeds, int steps = 0) const {
        require(!sliders.empty(), "generate: no slider rows", "sliders");
        require(sliders.size() == seeds.size(), "generate: one seed per slider row", "seed");
        require(prompt_class >= 0 && prompt_class < m_world.n_prompt_classes(), "prompt_class out of range",
                "prompt_class");
        require(steps <= m_sched.T, "steps exceed the schedule length " + std::to_string(m_sched.T), "steps");
        const auto& cfg = m_ck.params.cfg;
        for (const auto& v : sliders) {
            require(v.size() == cfg.n_sliders, "slider vector has wrong length", "sliders");
            for (Eigen::Index i = 0; i < v.size(); ++i)
                require(std::isfinite(v(i)) && v(i) >= 0.0 && v(i) <= 1.0, "slider value out of [0,1]", "sliders");
        }
        std::vector<const Eigen::MatrixXd*> text(sliders.size(),
                                                 &m_world.token_table[static_cast<size_t>(prompt_class)]);
        ConditionedDenoiser<float> denoise(m_ck.params, stack_slider_positions<float>(sliders, cfg.dim,
                                                                                       cfg.frequency_base),
                                           stack_text<float>(text));
        SamplerConfig sc;
        sc.steps = steps;
        sc.deterministic_final_step = m_ck.diffusion.deterministic_final_step;
        sc.literal_reverse = m_ck.diffusion.literal_reverse;
        Mat<float> out = sample_batch<float>(denoise, m_sched, sc, seeds, cfg.latent_dim);
        return out.cast<double>();
    }

    ConditionLatent generate_one(int prompt_class, const Eigen::VectorXd& sliders, uint64_t seed,
                                 int steps = 0) const {
        Eigen::MatrixXd m = generate(prompt_class, {sliders}, std::span<const uint64_t>(&seed, 1), steps);
        return {m.row(0).transpose()};
    }

private:
    const Checkpoint& m_ck;
    const World& m_world;
    NoiseSchedule m_sched;
};

} // namespace compslider
