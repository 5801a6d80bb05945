// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dual-branch training: each sample is denoised once with its dataset
// sliders and once with uniformly drawn sliders, sharing the noisy latent,
// the text tokens and the timestep. The denoiser receives gradients from
// all three losses; the classifier only from the disentanglement loss.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/checkpoint.hpp"
#include "compslider/common.hpp"
#include "compslider/denoiser.hpp"
#include "compslider/diffusion.hpp"
#include "compslider/embedding.hpp"
#include "compslider/losses.hpp"
#include "compslider/rng.hpp"
#include "compslider/world.hpp"

namespace compslider {

struct TrainConfig {
    int batch_size = 256;
    int total_steps = 20000;
    double lr_peak = 1e-4;
    double lr_floor = 1e-7;
    int warmup_steps = 500;
    int buckets = 20;
    double structure_threshold = 0.1;
    bool use_disentanglement = true;
    bool use_structure = true;
    double weight_diffusion = 1.0;
    double weight_disentanglement = 1.0;
    double weight_structure = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double holdout_fraction = 0.05;
    uint64_t seed = 1;
    int log_interval = 100;
    int checkpoint_interval = 0; // 0 disables periodic checkpoints

    void validate() const {
        require(batch_size >= 1, "batch_size must be >= 1", "batch_size");
        require(total_steps >= 1, "total_steps must be >= 1", "total_steps");
        require(warmup_steps >= 0 && warmup_steps < total_steps, "warmup_steps must be < total_steps",
                "warmup_steps");
        require(lr_peak > 0 && lr_floor >= 0 && lr_floor <= lr_peak, "need 0 <= lr_floor <= lr_peak", "lr_peak");
        require(buckets >= 2, "buckets must be >= 2", "buckets");
        require(structure_threshold > 0 && structure_threshold <= 1, "structure_threshold must be in (0, 1]",
                "structure_threshold");
        require(holdout_fraction >= 0 && holdout_fraction < 1, "holdout_fraction must be in [0, 1)",
                "holdout_fraction");
        require(log_interval >= 1, "log_interval must be >= 1", "log_interval");
        require(checkpoint_interval >= 0, "checkpoint_interval must be >= 0", "checkpoint_interval");
    }

    bool needs_random_branch() const { return use_disentanglement || use_structure; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"total_steps", c.total_steps},
            {"lr_peak", c.lr_peak},
            {"lr_floor", c.lr_floor},
            {"warmup_steps", c.warmup_steps},
            {"buckets", c.buckets},
            {"structure_threshold", c.structure_threshold},
            {"use_disentanglement", c.use_disentanglement},
            {"use_structure", c.use_structure},
            {"weight_diffusion", c.weight_diffusion},
            {"weight_disentanglement", c.weight_disentanglement},
            {"weight_structure", c.weight_structure},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"holdout_fraction", c.holdout_fraction},
            {"seed", c.seed},
            {"log_interval", c.log_interval},
            {"checkpoint_interval", c.checkpoint_interval}};
}

/// Linear warmup from 0 to lr_peak, then cosine annealing down to lr_floor at total_steps.
inline double lr_at(int step, const TrainConfig& cfg) {
    require(step >= 0 && step <= cfg.total_steps, "lr_at: step out of range", "step");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.lr_peak * static_cast<double>(step) / cfg.warmup_steps;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_floor + 0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + std::cos(M_PI * progress));
}

struct LossBreakdown {
    double diffusion = 0.0;
    double disentanglement = 0.0;
    double structure = 0.0;
    double total = 0.0;
    double gate_rate = 0.0;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
    return {{"diffusion", l.diffusion},
            {"disentanglement", l.disentanglement},
            {"structure", l.structure},
            {"total", l.total},
            {"gate_rate", l.gate_rate}};
}

/// Decoupled-weight-decay Adam. Decay applies to tensors named "*.weight".
template <typename S>
class AdamW {
public:
    AdamW(const ModelParams<S>& like, const TrainConfig& cfg)
        : m_m(like.zeros_like()), m_v(like.zeros_like()), m_beta1(cfg.beta1), m_beta2(cfg.beta2),
          m_eps(cfg.adam_eps), m_decay(cfg.weight_decay) {}

    void step(ModelParams<S>& params, ModelParams<S>& grads, double lr) {
        ++m_t;
        const double bc1 = 1.0 - std::pow(m_beta1, static_cast<double>(m_t));
        const double bc2 = 1.0 - std::pow(m_beta2, static_cast<double>(m_t));
        std::vector<Mat<S>*> ps, gs, ms, vs;
        std::vector<bool> decay;
        params.visit([&](const std::string& name, Mat<S>& m) {
            ps.push_back(&m);
            decay.push_back(name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0);
        });
        grads.visit([&](const std::string&, Mat<S>& m) { gs.push_back(&m); });
        m_m.visit([&](const std::string&, Mat<S>& m) { ms.push_back(&m); });
        m_v.visit([&](const std::string&, Mat<S>& m) { vs.push_back(&m); });
        const S b1 = static_cast<S>(m_beta1), b2 = static_cast<S>(m_beta2);
        const S step_size = static_cast<S>(lr / bc1);
        const S inv_bc2 = static_cast<S>(1.0 / bc2);
        const S eps = static_cast<S>(m_eps);
        for (size_t i = 0; i < ps.size(); ++i) {
            auto& p = *ps[i];
            auto& g = *gs[i];
            auto& m = *ms[i];
            auto& v = *vs[i];
            if (decay[i])
                p *= static_cast<S>(1.0 - lr * m_decay);
            m = b1 * m + (S(1) - b1) * g;
            v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
            p.array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
        }
    }

    int64_t steps() const { return m_t; }

private:
    ModelParams<S> m_m, m_v;
    double m_beta1, m_beta2, m_eps, m_decay;
    int64_t m_t = 0;
};

/// One assembled training batch.
template <typename S>
struct TrainBatch {
    DitInput<S> orig;          // dataset sliders
    Mat<S> random_slider_pos;  // slider tokens for v* (B*N x dim/2)
    Mat<S> c0;                 // clean latents, B x D
    Eigen::MatrixXd delta_v;   // v - v*, B x N
    Eigen::MatrixXi labels;    // bucketized delta_v
};

/// Draws a batch: record indices, uniform timesteps in [1, T], Gaussian noise, uniform v*.
template <typename S>
TrainBatch<S> make_batch(const World& world, const std::vector<DatasetRecord>& records, size_t n_train,
                         const DenoiserConfig& mcfg, const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng) {
    const int B = cfg.batch_size, N = mcfg.n_sliders, D = mcfg.latent_dim;
    TrainBatch<S> batch;
    batch.orig.c_t.resize(B, D);
    batch.orig.t.resize(static_cast<size_t>(B));
    batch.c0.resize(B, D);
    batch.delta_v.resize(B, N);
    batch.labels.resize(B, N);
    std::vector<Eigen::VectorXd> v(static_cast<size_t>(B)), v_star(static_cast<size_t>(B));
    std::vector<const Eigen::MatrixXd*> text(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        const auto& rec = records[rng.index(n_train)];
        const int t = 1 + static_cast<int>(rng.index(static_cast<uint64_t>(sched.T)));
        batch.orig.t[static_cast<size_t>(b)] = t;
        const double a = sched.sqrt_alpha_bar(t), s = sched.sqrt_one_minus_alpha_bar(t);
        for (int i = 0; i < D; ++i) {
            const double c0 = rec.latent.values(i);
            batch.c0(b, i) = static_cast<S>(c0);
            batch.orig.c_t(b, i) = static_cast<S>(a * c0 + s * rng.normal());
        }
        v[static_cast<size_t>(b)] = rec.sliders.values;
        Eigen::VectorXd vs(N);
        for (int i = 0; i < N; ++i)
            vs(i) = rng.uniform();
        v_star[static_cast<size_t>(b)] = vs;
        for (int i = 0; i < N; ++i) {
            batch.delta_v(b, i) = rec.sliders.values(i) - vs(i);
            batch.labels(b, i) = bucketize(batch.delta_v(b, i), cfg.buckets);
        }
        text[static_cast<size_t>(b)] = &world.token_table[static_cast<size_t>(rec.prompt_class)];
    }
    batch.orig.slider_pos = stack_slider_positions<S>(v, mcfg.dim, mcfg.frequency_base);
    batch.orig.text = stack_text<S>(text);
    batch.random_slider_pos = stack_slider_positions<S>(v_star, mcfg.dim, mcfg.frequency_base);
    return batch;
}

/// Forward both branches and the enabled losses; accumulates gradients into `grads`.
template <typename S>
LossBreakdown compute_losses(const ModelParams<S>& params, const TrainBatch<S>& batch, const TrainConfig& cfg,
                             ModelParams<S>& grads) {
    LossBreakdown lb;
    DitCache<S> cache_o, cache_r;
    Mat<S> out_o = dit_forward(params, batch.orig, cache_o);
    auto diff = diffusion_loss_batch(out_o, batch.c0);
    lb.diffusion = diff.value;
    Mat<S> d_o = diff.grad * static_cast<S>(cfg.weight_diffusion);

    // gate rate is reported for every configuration
    int active = 0;
    for (Eigen::Index b = 0; b < batch.delta_v.rows(); ++b)
        active += batch.delta_v.row(b).cwiseAbs().maxCoeff() <= cfg.structure_threshold;
    lb.gate_rate = static_cast<double>(active) / static_cast<double>(batch.delta_v.rows());

    if (cfg.needs_random_branch()) {
        DitInput<S> rand_in;
        rand_in.c_t = batch.orig.c_t;
        rand_in.t = batch.orig.t;
        rand_in.slider_pos = batch.random_slider_pos;
        rand_in.text = batch.orig.text;
        Mat<S> out_r = dit_forward(params, rand_in, cache_r);
        Mat<S> d_r = Mat<S>::Zero(out_r.rows(), out_r.cols());
        if (cfg.use_disentanglement) {
            ClassifierCache<S> cc;
            Mat<S> logits = classifier_forward(params, out_o, out_r, cc);
            auto ce = disentanglement_loss_batch(logits, batch.labels, cfg.buckets);
            lb.disentanglement = ce.value;
            Mat<S> dlogits = ce.grad * static_cast<S>(cfg.weight_disentanglement);
            Mat<S> da, db;
            classifier_backward(params, cc, dlogits, grads, da, db);
            d_o += da;
            d_r += db;
        }
        if (cfg.use_structure) {
            auto st = structure_loss_batch(out_o, out_r, batch.delta_v, cfg.structure_threshold);
            lb.structure = st.value;
            d_o += st.grad_orig * static_cast<S>(cfg.weight_structure);
            d_r -= st.grad_orig * static_cast<S>(cfg.weight_structure);
        }
        dit_backward(params, cache_r, d_r, grads);
    }
    dit_backward(params, cache_o, d_o, grads);
    lb.total = cfg.weight_diffusion * lb.diffusion + cfg.weight_disentanglement * lb.disentanglement +
               cfg.weight_structure * lb.structure;
    return lb;
}

/// One optimizer update at learning rate `lr`.
template <typename S>
LossBreakdown train_step(ModelParams<S>& params, AdamW<S>& opt, const TrainBatch<S>& batch, const TrainConfig& cfg,
                         double lr) {
    ModelParams<S> grads = params.zeros_like();
    LossBreakdown lb = compute_losses(params, batch, cfg, grads);
    if (!std::isfinite(lb.total) || !grads.all_finite())
        throw numeric_error("non-finite loss or gradient (diffusion=" + std::to_string(lb.diffusion) +
                            ", disentanglement=" + std::to_string(lb.disentanglement) +
                            ", structure=" + std::to_string(lb.structure) + ")");
    opt.step(params, grads, lr);
    return lb;
}

struct TrainResult {
    Checkpoint checkpoint;
    LossBreakdown last;
    std::vector<std::pair<int, LossBreakdown>> history; // one entry per log interval
    double seconds = 0.0;
};

struct TrainHooks {
    std::ostream* metrics_log = nullptr; // newline-delimited JSON
    std::function<void(const Checkpoint&)> on_checkpoint;
    std::function<void(int, const LossBreakdown&)> on_log;
};

inline size_t training_record_count(const Dataset& ds, const TrainConfig& cfg) {
    const auto n = ds.records.size();
    const auto held = static_cast<size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(n)));
    require(n > held, "dataset is too small for the configured hold-out");
    return n - held;
}

inline TrainResult train(const World& world, const Dataset& ds, const DenoiserConfig& mcfg,
                         const DiffusionConfig& dcfg, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    mcfg.validate();
    require(ds.spec_hash == world.hash, "dataset spec hash does not match the world", "spec_hash");
    require(mcfg.n_sliders == world.n_attributes() && mcfg.latent_dim == world.latent_dim() &&
                mcfg.text_len == world.spec.text_len && mcfg.dim == world.spec.token_dim,
            "denoiser config does not match the world dimensions");
    require(mcfg.n_buckets == cfg.buckets, "denoiser n_buckets must equal train buckets", "buckets");

    const auto start = std::chrono::steady_clock::now();
    const NoiseSchedule sched = dcfg.schedule();
    const size_t n_train = training_record_count(ds, cfg);

    TrainResult result;
    auto& ck = result.checkpoint;
    ck.params = init_params<float>(mcfg, derive_seed(cfg.seed, {100}));
    ck.diffusion = dcfg;
    ck.spec_hash = world.hash;
    ck.meta = {{"train", to_json(cfg)}};
    AdamW<float> opt(ck.params, cfg);
    Rng rng(derive_seed(cfg.seed, {101}));

    double acc_d = 0, acc_c = 0, acc_s = 0, acc_g = 0;
    int acc_n = 0;
    for (int step = 0; step < cfg.total_steps; ++step) {
        auto batch = make_batch<float>(world, ds.records, n_train, mcfg, sched, cfg, rng);
        const double lr = lr_at(step + 1, cfg);
        LossBreakdown lb = train_step(ck.params, opt, batch, cfg, lr);
        result.last = lb;
        acc_d += lb.diffusion;
        acc_c += lb.disentanglement;
        acc_s += lb.structure;
        acc_g += lb.gate_rate;
        ++acc_n;
        const int done = step + 1;
        if (done % cfg.log_interval == 0 || done == cfg.total_steps) {
            LossBreakdown mean;
            mean.diffusion = acc_d / acc_n;
            mean.disentanglement = acc_c / acc_n;
            mean.structure = acc_s / acc_n;
            mean.gate_rate = acc_g / acc_n;
            mean.total = cfg.weight_diffusion * mean.diffusion + cfg.weight_disentanglement * mean.disentanglement +
                         cfg.weight_structure * mean.structure;
            result.history.emplace_back(done, mean);
            if (hooks.metrics_log) {
                nlohmann::json rec = to_json(mean);
                rec["step"] = done;
                rec["lr"] = lr;
                *hooks.metrics_log << rec.dump() << "\n";
                hooks.metrics_log->flush();
            }
            if (hooks.on_log)
                hooks.on_log(done, mean);
            acc_d = acc_c = acc_s = acc_g = 0;
            acc_n = 0;
        }
        if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && hooks.on_checkpoint) {
            ck.step = static_cast<uint64_t>(done);
            hooks.on_checkpoint(ck);
        }
    }
    ck.step = static_cast<uint64_t>(cfg.total_steps);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ck.meta["final_loss"] = to_json(result.last);
    return result;
}

/// Bucket accuracy of the classifier on hold-out records with fresh v* and timesteps.
inline double classifier_accuracy(const Checkpoint& ck, const World& world, const std::vector<DatasetRecord>& records,
                                  int samples, uint64_t seed, int batch_size = 256) {
    require(!records.empty(), "classifier_accuracy: no records");
    const auto& params = ck.params;
    const NoiseSchedule sched = ck.diffusion.schedule();
    TrainConfig tc;
    tc.buckets = params.cfg.n_buckets;
    Rng rng(seed);
    int64_t correct = 0, total = 0;
    const int nb = params.cfg.n_buckets, N = params.cfg.n_sliders;
    for (int done = 0; done < samples; done += batch_size) {
        tc.batch_size = std::min(batch_size, samples - done);
        auto batch = make_batch<float>(world, records, records.size(), params.cfg, sched, tc, rng);
        Mat<float> out_o = dit_forward(params, batch.orig);
        DitInput<float> rand_in = batch.orig;
        rand_in.slider_pos = batch.random_slider_pos;
        Mat<float> out_r = dit_forward(params, rand_in);
        Mat<float> logits = classifier_forward(params, out_o, out_r);
        for (Eigen::Index b = 0; b < logits.rows(); ++b)
            for (int i = 0; i < N; ++i) {
                Eigen::Index arg;
                logits.row(b).segment(i * nb, nb).maxCoeff(&arg);
                correct += arg == batch.labels(b, i);
                ++total;
            }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

} // namespace compslider
