// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Transformer denoiser over [condition token, slider tokens, text tokens]
// that predicts the clean condition latent, plus the MLP classifier that
// decodes bucketized slider differences from a pair of predictions.
//
// The noisy latent enters as one projected token with the timestep
// embedding added; every block is modulated (shift/scale/gate) by the
// timestep embedding. Only the condition token is read out, so the last
// block computes queries for that token alone.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/common.hpp"
#include "compslider/embedding.hpp"
#include "compslider/nn.hpp"
#include "compslider/rng.hpp"

namespace compslider {

struct DenoiserConfig {
    int blocks = 2;
    int dim = 64;
    int heads = 4;
    int n_sliders = 5;
    int text_len = 8;
    int latent_dim = 64;
    int n_buckets = 20;
    int mlp_ratio = 4;
    int classifier_hidden = 0; // 0 selects 4 * dim
    double frequency_base = default_frequency_base;

    int hidden() const { return classifier_hidden > 0 ? classifier_hidden : 4 * dim; }
    int tokens() const { return 1 + n_sliders + text_len; }
    int head_dim() const { return dim / heads; }

    void validate() const {
        require(blocks >= 1, "denoiser needs at least one block", "blocks");
        require(dim >= 4 && dim % 4 == 0, "dim must be a positive multiple of 4", "dim");
        require(heads >= 1 && dim % heads == 0, "dim must be divisible by heads", "heads");
        require(n_sliders >= 1 && text_len >= 1 && latent_dim >= 1, "token counts must be >= 1");
        require(n_buckets >= 2, "n_buckets must be >= 2", "n_buckets");
        require(mlp_ratio >= 1 && hidden() >= 1, "mlp sizes must be >= 1");
    }

    /// Closed-form number of learnable scalars.
    int64_t parameter_count() const {
        const int64_t d = dim, D = latent_dim, r = mlp_ratio, H = hidden();
        const int64_t time = 2 * d * d + 2 * d;
        const int64_t input = D * d + d;
        const int64_t classes = static_cast<int64_t>(n_sliders) * (d / 2);
        const int64_t block = (10 + 2 * r) * d * d + (11 + r) * d;
        const int64_t head = 2 * d * d + 2 * d + d * D + D;
        const int64_t cls = 2 * D * H + H + H * H + H + H * n_sliders * n_buckets + n_sliders * n_buckets;
        return time + input + classes + blocks * block + head + cls;
    }
};

inline nlohmann::json to_json(const DenoiserConfig& c) {
    return {{"blocks", c.blocks},         {"dim", c.dim},         {"heads", c.heads},
            {"n_sliders", c.n_sliders},   {"text_len", c.text_len}, {"latent_dim", c.latent_dim},
            {"n_buckets", c.n_buckets},   {"mlp_ratio", c.mlp_ratio}, {"classifier_hidden", c.classifier_hidden},
            {"frequency_base", c.frequency_base}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.blocks = j.at("blocks").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.n_sliders = j.at("n_sliders").get<int>();
    c.text_len = j.at("text_len").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.n_buckets = j.at("n_buckets").get<int>();
    c.mlp_ratio = j.value("mlp_ratio", 4);
    c.classifier_hidden = j.value("classifier_hidden", 0);
    c.frequency_base = j.value("frequency_base", default_frequency_base);
    c.validate();
    return c;
}

template <typename S>
struct BlockParams {
    Mat<S> w_mod, b_mod; // d x 6d: shift1, scale1, gate1, shift2, scale2, gate2
    Mat<S> w_qkv, b_qkv;
    Mat<S> w_o, b_o;
    Mat<S> w_fc1, b_fc1;
    Mat<S> w_fc2, b_fc2;

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "mod.weight", w_mod);
        f(prefix + "mod.bias", b_mod);
        f(prefix + "qkv.weight", w_qkv);
        f(prefix + "qkv.bias", b_qkv);
        f(prefix + "attn_out.weight", w_o);
        f(prefix + "attn_out.bias", b_o);
        f(prefix + "fc1.weight", w_fc1);
        f(prefix + "fc1.bias", b_fc1);
        f(prefix + "fc2.weight", w_fc2);
        f(prefix + "fc2.bias", b_fc2);
    }
};

template <typename S>
struct DitParams {
    Mat<S> w_t1, b_t1, w_t2, b_t2; // timestep MLP
    Mat<S> w_in, b_in;             // latent -> condition token
    Mat<S> class_emb;              // N x dim/2, the learnable half of each slider token
    std::vector<BlockParams<S>> blocks;
    Mat<S> w_fmod, b_fmod;         // final shift/scale
    Mat<S> w_out, b_out;           // condition token -> latent

    template <typename F>
    void visit(F&& f) {
        f("time.fc1.weight", w_t1);
        f("time.fc1.bias", b_t1);
        f("time.fc2.weight", w_t2);
        f("time.fc2.bias", b_t2);
        f("input.weight", w_in);
        f("input.bias", b_in);
        f("slider.class_embedding", class_emb);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit("block" + std::to_string(i) + ".", f);
        f("final.mod.weight", w_fmod);
        f("final.mod.bias", b_fmod);
        f("final.out.weight", w_out);
        f("final.out.bias", b_out);
    }
};

template <typename S>
struct ClassifierParams {
    Mat<S> w1, b1, w2, b2, w3, b3;

    template <typename F>
    void visit(F&& f) {
        f("classifier.fc1.weight", w1);
        f("classifier.fc1.bias", b1);
        f("classifier.fc2.weight", w2);
        f("classifier.fc2.bias", b2);
        f("classifier.fc3.weight", w3);
        f("classifier.fc3.bias", b3);
    }
};

template <typename S>
struct ModelParams {
    DenoiserConfig cfg;
    DitParams<S> dit;
    ClassifierParams<S> cls;

    template <typename F>
    void visit(F&& f) {
        dit.visit(f);
        cls.visit(f);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<ModelParams*>(this)->visit([&](const std::string& name, Mat<S>& m) {
            f(name, static_cast<const Mat<S>&>(m));
        });
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        visit([&](const std::string&, const Mat<S>& m) { n += m.size(); });
        return n;
    }

    ModelParams zeros_like() const {
        ModelParams out = *this;
        out.visit([](const std::string&, Mat<S>& m) { m.setZero(); });
        return out;
    }

    template <typename T>
    ModelParams<T> cast() const {
        ModelParams<T> out;
        out.cfg = cfg;
        out.dit.blocks.resize(dit.blocks.size());
        std::vector<const Mat<S>*> src;
        visit([&](const std::string&, const Mat<S>& m) { src.push_back(&m); });
        size_t i = 0;
        out.visit([&](const std::string&, Mat<T>& m) { m = src[i++]->template cast<T>(); });
        return out;
    }

    bool all_finite() const {
        bool ok = true;
        visit([&](const std::string&, const Mat<S>& m) { ok = ok && m.allFinite(); });
        return ok;
    }
};

/// Fan-in Gaussian weights, zero biases, zero output head.
template <typename S>
ModelParams<S> init_params(const DenoiserConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.dim, D = cfg.latent_dim, f = cfg.mlp_ratio * d, H = cfg.hidden();
    const int nb = cfg.n_sliders * cfg.n_buckets;
    auto weight = [&](int in, int out) {
        Mat<S> m(in, out);
        nn::fill_normal(m, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        return m;
    };
    auto bias = [](int n) { return Mat<S>::Zero(1, n).eval(); };

    ModelParams<S> p;
    p.cfg = cfg;
    auto& dit = p.dit;
    dit.w_t1 = weight(d, d);
    dit.b_t1 = bias(d);
    dit.w_t2 = weight(d, d);
    dit.b_t2 = bias(d);
    dit.w_in = weight(D, d);
    dit.b_in = bias(d);
    dit.class_emb = Mat<S>(cfg.n_sliders, d / 2);
    nn::fill_normal(dit.class_emb, rng, 1.0);
    for (int b = 0; b < cfg.blocks; ++b) {
        BlockParams<S> blk;
        blk.w_mod = weight(d, 6 * d);
        blk.b_mod = bias(6 * d);
        blk.w_qkv = weight(d, 3 * d);
        blk.b_qkv = bias(3 * d);
        blk.w_o = weight(d, d);
        blk.b_o = bias(d);
        blk.w_fc1 = weight(d, f);
        blk.b_fc1 = bias(f);
        blk.w_fc2 = weight(f, d);
        blk.b_fc2 = bias(d);
        dit.blocks.push_back(std::move(blk));
    }
    dit.w_fmod = weight(d, 2 * d);
    dit.b_fmod = bias(2 * d);
    dit.w_out = Mat<S>::Zero(d, D);
    dit.b_out = bias(D);

    auto& cls = p.cls;
    cls.w1 = weight(2 * D, H);
    cls.b1 = bias(H);
    cls.w2 = weight(H, H);
    cls.b2 = bias(H);
    cls.w3 = weight(H, nb);
    cls.b3 = bias(nb);
    return p;
}

/// One batch of denoiser inputs. Rows of `slider_pos` and `text` are grouped
/// per sample (N and L rows respectively).
template <typename S>
struct DitInput {
    Mat<S> c_t;          // B x D
    std::vector<int> t;  // B
    Mat<S> slider_pos;   // B*N x dim/2
    Mat<S> text;         // B*L x dim

    Eigen::Index batch() const { return c_t.rows(); }
};

template <typename S>
Mat<S> timestep_features(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Mat<S> e(static_cast<Eigen::Index>(t.size()), dim);
    for (size_t b = 0; b < t.size(); ++b)
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            e(static_cast<Eigen::Index>(b), k) = static_cast<S>(std::cos(t[b] * freq));
            e(static_cast<Eigen::Index>(b), k + half) = static_cast<S>(std::sin(t[b] * freq));
        }
    return e;
}

template <typename S>
struct BlockCache {
    bool pruned = false;
    Mat<S> mod;          // B x 6d
    Mat<S> xhat1;
    Vec<S> rstd1;
    Mat<S> h1, qkv;
    Mat<S> probs;        // (B*heads*R) x S
    Mat<S> attn, a;      // B*R x d
    Mat<S> xhat2;
    Vec<S> rstd2;
    Mat<S> h2, u, g, m;
};

template <typename S>
struct DitCache {
    Eigen::Index batch = 0;
    Mat<S> t_feat, t_h, t_a, temb, temb_act;
    Mat<S> c_t;
    std::vector<BlockCache<S>> blocks;
    Mat<S> xhatf;
    Vec<S> rstdf;
    Mat<S> fmod, hf;
};

namespace detail {

// rows of sample b occupy [b*R, (b+1)*R)
template <typename S>
void modulate(Mat<S>& h, const Mat<S>& xhat, const Mat<S>& mod, int shift_off, int scale_off, int d, int R) {
    h.resize(xhat.rows(), xhat.cols());
    for (Eigen::Index b = 0; b < mod.rows(); ++b) {
        auto shift = mod.row(b).segment(shift_off, d).array();
        auto scale = (mod.row(b).segment(scale_off, d).array() + S(1));
        for (int r = 0; r < R; ++r) {
            const auto row = b * R + r;
            h.row(row) = xhat.row(row).array() * scale + shift;
        }
    }
}

template <typename S>
Mat<S> block_forward(const BlockParams<S>& p, const DenoiserConfig& cfg, const Mat<S>& x, const Mat<S>& temb_act,
                     bool pruned, BlockCache<S>& c) {
    const int d = cfg.dim, S_len = cfg.tokens(), H = cfg.heads, hd = cfg.head_dim();
    const int R = pruned ? 1 : S_len;
    const Eigen::Index B = temb_act.rows();
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    c.pruned = pruned;
    c.mod = nn::linear(temb_act, p.w_mod, p.b_mod);

    nn::layer_norm(x, c.xhat1, c.rstd1);
    modulate(c.h1, c.xhat1, c.mod, 0, d, d, S_len);
    c.qkv = nn::linear(c.h1, p.w_qkv, p.b_qkv);

    c.probs.resize(B * H * R, S_len);
    c.attn.resize(B * R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            auto q = c.qkv.block(b * S_len, h * hd, R, hd);
            auto k = c.qkv.block(b * S_len, d + h * hd, S_len, hd);
            auto v = c.qkv.block(b * S_len, 2 * d + h * hd, S_len, hd);
            auto pr = c.probs.block((b * H + h) * R, 0, R, S_len);
            pr.noalias() = scale * q * k.transpose();
            nn::softmax_rows(pr);
            c.attn.block(b * R, h * hd, R, hd).noalias() = pr * v;
        }
    }
    c.a = nn::linear(c.attn, p.w_o, p.b_o);

    Mat<S> x2(B * R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto gate = c.mod.row(b).segment(2 * d, d).array();
        for (int r = 0; r < R; ++r)
            x2.row(b * R + r) = x.row(b * S_len + r).array() + gate * c.a.row(b * R + r).array();
    }

    nn::layer_norm(x2, c.xhat2, c.rstd2);
    modulate(c.h2, c.xhat2, c.mod, 3 * d, 4 * d, d, R);
    c.u = nn::linear(c.h2, p.w_fc1, p.b_fc1);
    c.g = nn::gelu(c.u);
    c.m = nn::linear(c.g, p.w_fc2, p.b_fc2);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto gate = c.mod.row(b).segment(5 * d, d).array();
        for (int r = 0; r < R; ++r)
            x2.row(b * R + r).array() += gate * c.m.row(b * R + r).array();
    }
    return x2;
}

/// Returns d(input); accumulates parameter grads and d(silu(temb)).
template <typename S>
Mat<S> block_backward(const BlockParams<S>& p, const DenoiserConfig& cfg, const BlockCache<S>& c,
                      const Mat<S>& temb_act, const Mat<S>& dy, BlockParams<S>& g, Mat<S>& dtemb_act) {
    const int d = cfg.dim, S_len = cfg.tokens(), H = cfg.heads, hd = cfg.head_dim();
    const int R = c.pruned ? 1 : S_len;
    const Eigen::Index B = temb_act.rows();
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    Mat<S> dmod = Mat<S>::Zero(B, 6 * d);

    // x3 = x2 + gate2 * m
    Mat<S> dm(B * R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto gate = c.mod.row(b).segment(5 * d, d).array();
        for (int r = 0; r < R; ++r) {
            const auto row = b * R + r;
            dmod.row(b).segment(5 * d, d).array() += dy.row(row).array() * c.m.row(row).array();
            dm.row(row) = dy.row(row).array() * gate;
        }
    }
    Mat<S> dg = nn::linear_backward(c.g, p.w_fc2, dm, g.w_fc2, g.b_fc2);
    Mat<S> du = nn::gelu_backward(c.u, dg);
    Mat<S> dh2 = nn::linear_backward(c.h2, p.w_fc1, du, g.w_fc1, g.b_fc1);
    Mat<S> dxhat2(B * R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto sc = c.mod.row(b).segment(4 * d, d).array() + S(1);
        for (int r = 0; r < R; ++r) {
            const auto row = b * R + r;
            dmod.row(b).segment(3 * d, d) += dh2.row(row);
            dmod.row(b).segment(4 * d, d).array() += dh2.row(row).array() * c.xhat2.row(row).array();
            dxhat2.row(row) = dh2.row(row).array() * sc;
        }
    }
    Mat<S> dx2 = dy + nn::layer_norm_backward(dxhat2, c.xhat2, c.rstd2);

    // x2 = x[query rows] + gate1 * a
    Mat<S> da(B * R, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto gate = c.mod.row(b).segment(2 * d, d).array();
        for (int r = 0; r < R; ++r) {
            const auto row = b * R + r;
            dmod.row(b).segment(2 * d, d).array() += dx2.row(row).array() * c.a.row(row).array();
            da.row(row) = dx2.row(row).array() * gate;
        }
    }
    Mat<S> dattn = nn::linear_backward(c.attn, p.w_o, da, g.w_o, g.b_o);

    Mat<S> dqkv = Mat<S>::Zero(B * S_len, 3 * d);
    Mat<S> dp(R, S_len);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
            auto q = c.qkv.block(b * S_len, h * hd, R, hd);
            auto k = c.qkv.block(b * S_len, d + h * hd, S_len, hd);
            auto v = c.qkv.block(b * S_len, 2 * d + h * hd, S_len, hd);
            auto pr = c.probs.block((b * H + h) * R, 0, R, S_len);
            auto dout = dattn.block(b * R, h * hd, R, hd);
            dp.noalias() = dout * v.transpose();
            dqkv.block(b * S_len, 2 * d + h * hd, S_len, hd).noalias() += pr.transpose() * dout;
            for (int r = 0; r < R; ++r) {
                const S dotp = dp.row(r).dot(pr.row(r));
                dp.row(r) = pr.row(r).array() * (dp.row(r).array() - dotp);
            }
            dqkv.block(b * S_len, h * hd, R, hd).noalias() += scale * dp * k;
            dqkv.block(b * S_len, d + h * hd, S_len, hd).noalias() += scale * dp.transpose() * q;
        }
    }
    Mat<S> dh1 = nn::linear_backward(c.h1, p.w_qkv, dqkv, g.w_qkv, g.b_qkv);
    Mat<S> dxhat1(B * S_len, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto sc = c.mod.row(b).segment(d, d).array() + S(1);
        for (int r = 0; r < S_len; ++r) {
            const auto row = b * S_len + r;
            dmod.row(b).segment(0, d) += dh1.row(row);
            dmod.row(b).segment(d, d).array() += dh1.row(row).array() * c.xhat1.row(row).array();
            dxhat1.row(row) = dh1.row(row).array() * sc;
        }
    }
    Mat<S> dx = nn::layer_norm_backward(dxhat1, c.xhat1, c.rstd1);
    for (Eigen::Index b = 0; b < B; ++b)
        for (int r = 0; r < R; ++r)
            dx.row(b * S_len + r) += dx2.row(b * R + r);

    dtemb_act += nn::linear_backward(temb_act, p.w_mod, dmod, g.w_mod, g.b_mod);
    return dx;
}

} // namespace detail

/// Batched denoiser forward; fills `cache` for a later backward pass.
template <typename S>
Mat<S> dit_forward(const ModelParams<S>& params, const DitInput<S>& in, DitCache<S>& cache) {
    const auto& cfg = params.cfg;
    const auto& p = params.dit;
    const int d = cfg.dim, N = cfg.n_sliders, L = cfg.text_len, S_len = cfg.tokens();
    const Eigen::Index B = in.batch();
    require(in.c_t.cols() == cfg.latent_dim, "dit_forward: latent width mismatch", "c_t");
    require(static_cast<Eigen::Index>(in.t.size()) == B, "dit_forward: timestep count mismatch", "t");
    require(in.slider_pos.rows() == B * N && in.slider_pos.cols() == d / 2, "dit_forward: slider token shape mismatch",
            "slider_pos");
    require(in.text.rows() == B * L && in.text.cols() == d, "dit_forward: text token shape mismatch", "text");
    for (int t : in.t)
        require(t >= 1, "dit_forward: timestep must be >= 1", "t");

    cache.batch = B;
    cache.t_feat = timestep_features<S>(in.t, d);
    cache.t_h = nn::linear(cache.t_feat, p.w_t1, p.b_t1);
    cache.t_a = nn::silu(cache.t_h);
    cache.temb = nn::linear(cache.t_a, p.w_t2, p.b_t2);
    cache.temb_act = nn::silu(cache.temb);
    cache.c_t = in.c_t;

    Mat<S> cond = nn::linear(in.c_t, p.w_in, p.b_in) + cache.temb;
    Mat<S> x(B * S_len, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        x.row(b * S_len) = cond.row(b);
        x.block(b * S_len + 1, 0, N, d / 2) = in.slider_pos.middleRows(b * N, N);
        x.block(b * S_len + 1, d / 2, N, d / 2) = p.class_emb;
        x.middleRows(b * S_len + 1 + N, L) = in.text.middleRows(b * L, L);
    }

    cache.blocks.resize(p.blocks.size());
    for (size_t k = 0; k < p.blocks.size(); ++k) {
        const bool last = k + 1 == p.blocks.size();
        x = detail::block_forward(p.blocks[k], cfg, x, cache.temb_act, last, cache.blocks[k]);
    }

    // x now holds the condition token of each sample (B x d)
    nn::layer_norm(x, cache.xhatf, cache.rstdf);
    cache.fmod = nn::linear(cache.temb_act, p.w_fmod, p.b_fmod);
    detail::modulate(cache.hf, cache.xhatf, cache.fmod, 0, d, d, 1);
    Mat<S> out = nn::linear(cache.hf, p.w_out, p.b_out);
    if (!out.allFinite())
        throw numeric_error("dit_forward: non-finite output");
    return out;
}

template <typename S>
Mat<S> dit_forward(const ModelParams<S>& params, const DitInput<S>& in) {
    DitCache<S> cache;
    return dit_forward(params, in, cache);
}

/// Accumulates d(loss)/d(denoiser params) into grads.dit given d(loss)/d(output).
template <typename S>
void dit_backward(const ModelParams<S>& params, const DitCache<S>& cache, const Mat<S>& dout, ModelParams<S>& grads) {
    const auto& cfg = params.cfg;
    const auto& p = params.dit;
    auto& g = grads.dit;
    const int d = cfg.dim, N = cfg.n_sliders, S_len = cfg.tokens();
    const Eigen::Index B = cache.batch;
    require(dout.rows() == B && dout.cols() == cfg.latent_dim, "dit_backward: gradient shape mismatch");

    Mat<S> dtemb_act = Mat<S>::Zero(B, d);
    Mat<S> dhf = nn::linear_backward(cache.hf, p.w_out, dout, g.w_out, g.b_out);
    Mat<S> dfmod(B, 2 * d);
    dfmod.leftCols(d) = dhf;
    dfmod.rightCols(d) = dhf.cwiseProduct(cache.xhatf);
    Mat<S> dxhatf(B, d);
    for (Eigen::Index b = 0; b < B; ++b)
        dxhatf.row(b) = dhf.row(b).array() * (cache.fmod.row(b).segment(d, d).array() + S(1));
    dtemb_act += nn::linear_backward(cache.temb_act, p.w_fmod, dfmod, g.w_fmod, g.b_fmod);
    Mat<S> dx = nn::layer_norm_backward(dxhatf, cache.xhatf, cache.rstdf);

    for (size_t k = p.blocks.size(); k-- > 0;)
        dx = detail::block_backward(p.blocks[k], cfg, cache.blocks[k], cache.temb_act, dx, g.blocks[k], dtemb_act);

    Mat<S> dcond(B, d);
    for (Eigen::Index b = 0; b < B; ++b) {
        dcond.row(b) = dx.row(b * S_len);
        g.class_emb += dx.block(b * S_len + 1, d / 2, N, d / 2);
    }
    nn::linear_backward_params(cache.c_t, dcond, g.w_in, g.b_in);
    Mat<S> dtemb = dcond + nn::silu_backward(cache.temb, dtemb_act);
    Mat<S> dta = nn::linear_backward(cache.t_a, p.w_t2, dtemb, g.w_t2, g.b_t2);
    Mat<S> dth = nn::silu_backward(cache.t_h, dta);
    nn::linear_backward_params(cache.t_feat, dth, g.w_t1, g.b_t1);
}

template <typename S>
struct ClassifierCache {
    Mat<S> in, z1, a1, z2, a2;
};

/// Logits of shape B x (N * n_buckets); attribute i owns columns [i*nb, (i+1)*nb).
template <typename S>
Mat<S> classifier_forward(const ModelParams<S>& params, const Mat<S>& out_a, const Mat<S>& out_b,
                          ClassifierCache<S>& cache) {
    const auto& c = params.cls;
    const int D = params.cfg.latent_dim;
    require(out_a.cols() == D && out_b.cols() == D && out_a.rows() == out_b.rows(),
            "classifier_forward: input shape mismatch");
    cache.in.resize(out_a.rows(), 2 * D);
    cache.in.leftCols(D) = out_a;
    cache.in.rightCols(D) = out_b;
    cache.z1 = nn::linear(cache.in, c.w1, c.b1);
    cache.a1 = nn::gelu(cache.z1);
    cache.z2 = nn::linear(cache.a1, c.w2, c.b2);
    cache.a2 = nn::gelu(cache.z2);
    Mat<S> logits = nn::linear(cache.a2, c.w3, c.b3);
    if (!logits.allFinite())
        throw numeric_error("classifier_forward: non-finite logits");
    return logits;
}

template <typename S>
Mat<S> classifier_forward(const ModelParams<S>& params, const Mat<S>& out_a, const Mat<S>& out_b) {
    ClassifierCache<S> cache;
    return classifier_forward(params, out_a, out_b, cache);
}

/// Accumulates classifier grads; writes d(loss)/d(out_a), d(loss)/d(out_b).
template <typename S>
void classifier_backward(const ModelParams<S>& params, const ClassifierCache<S>& cache, const Mat<S>& dlogits,
                         ModelParams<S>& grads, Mat<S>& d_out_a, Mat<S>& d_out_b) {
    const auto& c = params.cls;
    auto& g = grads.cls;
    const int D = params.cfg.latent_dim;
    Mat<S> da2 = nn::linear_backward(cache.a2, c.w3, dlogits, g.w3, g.b3);
    Mat<S> dz2 = nn::gelu_backward(cache.z2, da2);
    Mat<S> da1 = nn::linear_backward(cache.a1, c.w2, dz2, g.w2, g.b2);
    Mat<S> dz1 = nn::gelu_backward(cache.z1, da1);
    Mat<S> din = nn::linear_backward(cache.in, c.w1, dz1, g.w1, g.b1);
    d_out_a = din.leftCols(D);
    d_out_b = din.rightCols(D);
}

// ---------------------------------------------------------------------------
// Conditioning helpers

/// Per-sample text tokens stacked into one matrix (rows grouped per sample).
template <typename S>
Mat<S> stack_text(const std::vector<const Eigen::MatrixXd*>& per_sample) {
    require(!per_sample.empty(), "stack_text: empty batch");
    const auto L = per_sample.front()->rows(), W = per_sample.front()->cols();
    Mat<S> out(static_cast<Eigen::Index>(per_sample.size()) * L, W);
    for (size_t b = 0; b < per_sample.size(); ++b)
        out.middleRows(static_cast<Eigen::Index>(b) * L, L) = per_sample[b]->template cast<S>();
    return out;
}

template <typename S>
Mat<S> stack_slider_positions(const std::vector<Eigen::VectorXd>& sliders, int dim, double base) {
    require(!sliders.empty(), "stack_slider_positions: empty batch");
    const auto N = sliders.front().size();
    Mat<S> out(static_cast<Eigen::Index>(sliders.size()) * N, dim / 2);
    for (size_t b = 0; b < sliders.size(); ++b)
        out.middleRows(static_cast<Eigen::Index>(b) * N, N) = positional_encode<S>(sliders[b], dim, base);
    return out;
}

/// Full slider tokens [p(v), w] of one sample, N x dim.
template <typename S>
Mat<S> slider_tokens(const ModelParams<S>& params, const Eigen::VectorXd& sliders) {
    return slider_embed<S>(positional_encode<S>(sliders, params.cfg.dim, params.cfg.frequency_base),
                           params.dit.class_emb);
}

/// Denoiser with fixed per-row conditioning, callable as f(c_t, t) by the sampler.
template <typename S>
class ConditionedDenoiser {
public:
    ConditionedDenoiser(const ModelParams<S>& params, Mat<S> slider_pos, Mat<S> text)
        : m_params(params), m_slider_pos(std::move(slider_pos)), m_text(std::move(text)) {}

    Mat<S> operator()(const Mat<S>& c_t, int t) const {
        DitInput<S> in;
        in.c_t = c_t;
        in.t.assign(static_cast<size_t>(c_t.rows()), t);
        in.slider_pos = m_slider_pos;
        in.text = m_text;
        return dit_forward(m_params, in);
    }

private:
    const ModelParams<S>& m_params;
    Mat<S> m_slider_pos;
    Mat<S> m_text;
};

} // namespace compslider
