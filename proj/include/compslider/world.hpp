// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic ground-truth world: an invertible map between
// (attributes, identity, prompt class) and condition latents, plus the
// samplers and the dataset file used to train the slider denoiser.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "compslider/common.hpp"
#include "compslider/rng.hpp"

namespace compslider {

struct WorldSpec {
    int n_attributes = 5;
    int latent_dim = 64;
    int n_prompt_classes = 8;
    int identity_dim = 8;
    int text_len = 8;
    int token_dim = 64;
    Eigen::MatrixXd attr_correlation;
    double obs_noise_sigma = 0.01;
    uint64_t world_seed = 7;
    // Adds a fixed monotone wiggle to the attribute coordinates before mixing.
    bool smooth_perturbation = false;
};

inline std::vector<std::string> attribute_names(int n) {
    static const char* known[] = {"age", "smile", "surprise", "sadness", "anger"};
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i)
        names.push_back(i < 5 ? known[i] : "attr_" + std::to_string(i));
    return names;
}

inline std::vector<std::string> prompt_class_names(int n) {
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i)
        names.push_back("prompt_" + std::to_string(i));
    return names;
}

/// Symmetric projection onto the correlation matrices with eigenvalues >= floor.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& m, double floor = 1e-6) {
    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    Eigen::MatrixXd pd = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    Eigen::VectorXd d = pd.diagonal().cwiseSqrt().cwiseInverse();
    pd = d.asDiagonal() * pd * d.asDiagonal();
    return 0.5 * (pd + pd.transpose());
}

/// corr(age, smile) = -0.7 and corr(surprise, sadness) = -0.5, all else 0.
inline Eigen::MatrixXd default_correlation(int n) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(n, n);
    if (n >= 2)
        c(0, 1) = c(1, 0) = -0.7;
    if (n >= 4)
        c(2, 3) = c(3, 2) = -0.5;
    return nearest_correlation(c);
}

inline WorldSpec default_world_spec() {
    WorldSpec spec;
    spec.attr_correlation = default_correlation(spec.n_attributes);
    return spec;
}

inline void validate(const WorldSpec& s) {
    require(s.n_attributes >= 1 && s.latent_dim >= 1 && s.n_prompt_classes >= 1 && s.identity_dim >= 1 &&
                s.text_len >= 1 && s.token_dim >= 1,
            "world dimensions must all be >= 1");
    require(s.n_attributes + s.identity_dim <= s.latent_dim,
            "n_attributes + identity_dim (" + std::to_string(s.n_attributes + s.identity_dim) +
                ") exceeds latent_dim (" + std::to_string(s.latent_dim) + ")",
            "latent_dim");
    require(s.obs_noise_sigma >= 0.0 && std::isfinite(s.obs_noise_sigma), "obs_noise_sigma must be >= 0",
            "obs_noise_sigma");
    const auto& c = s.attr_correlation;
    require(c.rows() == s.n_attributes && c.cols() == s.n_attributes,
            "attr_correlation must be n_attributes x n_attributes", "attr_correlation");
    require(c.allFinite(), "attr_correlation must be finite", "attr_correlation");
    require((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "attr_correlation must be symmetric",
            "attr_correlation");
    for (int i = 0; i < c.rows(); ++i)
        require(std::abs(c(i, i) - 1.0) <= 1e-12, "attr_correlation must have unit diagonal",
                "attr_correlation");
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    require(llt.info() == Eigen::Success, "attr_correlation is not positive definite", "attr_correlation");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    require(es.eigenvalues().minCoeff() > 0.0, "attr_correlation is not positive definite", "attr_correlation");
}

inline std::string canonical_serialization(const WorldSpec& s) {
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "compslider.world/v1;n_attributes=" << s.n_attributes << ";latent_dim=" << s.latent_dim
       << ";n_prompt_classes=" << s.n_prompt_classes << ";identity_dim=" << s.identity_dim
       << ";text_len=" << s.text_len << ";token_dim=" << s.token_dim << ";obs_noise_sigma=" << num(s.obs_noise_sigma)
       << ";world_seed=" << s.world_seed << ";smooth_perturbation=" << (s.smooth_perturbation ? 1 : 0)
       << ";attr_correlation=";
    for (int i = 0; i < s.attr_correlation.rows(); ++i)
        for (int j = 0; j < s.attr_correlation.cols(); ++j)
            os << (i || j ? "," : "") << num(s.attr_correlation(i, j));
    return os.str();
}

inline uint64_t spec_hash(const WorldSpec& s) { return fnv1a(canonical_serialization(s)); }

inline nlohmann::json to_json(const WorldSpec& s) {
    nlohmann::json corr = nlohmann::json::array();
    for (int i = 0; i < s.attr_correlation.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < s.attr_correlation.cols(); ++j)
            row.push_back(s.attr_correlation(i, j));
        corr.push_back(row);
    }
    return {{"schema", "compslider.world/v1"},
            {"n_attributes", s.n_attributes},
            {"latent_dim", s.latent_dim},
            {"n_prompt_classes", s.n_prompt_classes},
            {"identity_dim", s.identity_dim},
            {"text_len", s.text_len},
            {"token_dim", s.token_dim},
            {"obs_noise_sigma", s.obs_noise_sigma},
            {"world_seed", s.world_seed},
            {"smooth_perturbation", s.smooth_perturbation},
            {"attr_correlation", corr},
            {"spec_hash", hex64(spec_hash(s))}};
}

inline WorldSpec world_spec_from_json(const nlohmann::json& j) {
    WorldSpec s;
    try {
        s.n_attributes = j.at("n_attributes").get<int>();
        s.latent_dim = j.at("latent_dim").get<int>();
        s.n_prompt_classes = j.at("n_prompt_classes").get<int>();
        s.identity_dim = j.at("identity_dim").get<int>();
        s.text_len = j.at("text_len").get<int>();
        s.token_dim = j.at("token_dim").get<int>();
        s.obs_noise_sigma = j.at("obs_noise_sigma").get<double>();
        s.world_seed = j.at("world_seed").get<uint64_t>();
        s.smooth_perturbation = j.value("smooth_perturbation", false);
        const auto& corr = j.at("attr_correlation");
        s.attr_correlation = Eigen::MatrixXd(s.n_attributes, s.n_attributes);
        require(corr.size() == static_cast<size_t>(s.n_attributes), "attr_correlation row count", "attr_correlation");
        for (int r = 0; r < s.n_attributes; ++r) {
            require(corr[r].size() == static_cast<size_t>(s.n_attributes), "attr_correlation column count",
                    "attr_correlation");
            for (int c = 0; c < s.n_attributes; ++c)
                s.attr_correlation(r, c) = corr[r][c].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("invalid world spec: ") + e.what());
    }
    validate(s);
    return s;
}

/// Strictly increasing affine map [0,1] -> [-1,1].
struct AffineMap {
    double slope = 2.0;
    double offset = -1.0;
    double apply(double v) const { return slope * v + offset; }
    double invert(double u) const { return (u - offset) / slope; }
};

struct SliderVector {
    Eigen::VectorXd values;
};
struct IdentityVector {
    Eigen::VectorXd values;
};
struct ConditionLatent {
    Eigen::VectorXd values;
};

struct World {
    WorldSpec spec;
    uint64_t hash = 0;
    Eigen::MatrixXd mixing;                  // D x D orthogonal
    std::vector<Eigen::VectorXd> prompt_offsets;
    std::vector<AffineMap> attr_scale;
    std::vector<Eigen::MatrixXd> token_table; // P matrices, L x token_dim
    Eigen::MatrixXd correlation_factor;       // lower Cholesky factor of attr_correlation

    int n_attributes() const { return spec.n_attributes; }
    int latent_dim() const { return spec.latent_dim; }
    int identity_dim() const { return spec.identity_dim; }
    int n_prompt_classes() const { return spec.n_prompt_classes; }
};

namespace detail {

constexpr double perturbation_amplitude = 0.1;

inline double perturb(double u) { return u + perturbation_amplitude * std::sin(M_PI * u); }

// perturb is strictly increasing (slope >= 1 - 0.1*pi), so bisection is exact enough.
inline double unperturb(double y) {
    double lo = y - 2 * perturbation_amplitude - 1.0, hi = y + 2 * perturbation_amplitude + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        double mid = 0.5 * (lo + hi);
        (perturb(mid) < y ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace detail

inline World build_world(const WorldSpec& spec) {
    validate(spec);
    World w;
    w.spec = spec;
    w.hash = spec_hash(spec);
    const int d = spec.latent_dim;

    Rng mix_rng(derive_seed(spec.world_seed, {1}));
    Eigen::MatrixXd g(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
            g(r, c) = mix_rng.normal();
    // Q factor of g with a positive R diagonal, by two-pass Gram-Schmidt.
    // Avoids Eigen's triangular products, which are wrong under EIGEN_USE_BLAS.
    Eigen::MatrixXd q = g;
    for (int c = 0; c < d; ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            if (c > 0) {
                const Eigen::VectorXd proj = q.leftCols(c).transpose() * q.col(c);
                q.col(c) -= q.leftCols(c) * proj;
            }
        }
        q.col(c).normalize();
    }
    w.mixing = q;

    Rng offset_rng(derive_seed(spec.world_seed, {2}));
    for (int p = 0; p < spec.n_prompt_classes; ++p) {
        Eigen::VectorXd b(d);
        for (int i = 0; i < d; ++i)
            b(i) = 0.25 * offset_rng.normal();
        w.prompt_offsets.push_back(b);
    }

    w.attr_scale.assign(static_cast<size_t>(spec.n_attributes), AffineMap{});

    Rng token_rng(derive_seed(spec.world_seed, {3}));
    for (int p = 0; p < spec.n_prompt_classes; ++p) {
        Eigen::MatrixXd t(spec.text_len, spec.token_dim);
        for (int r = 0; r < t.rows(); ++r)
            for (int c = 0; c < t.cols(); ++c)
                t(r, c) = token_rng.normal();
        double rms = std::sqrt(t.squaredNorm() / static_cast<double>(t.size()));
        w.token_table.push_back(t / rms);
    }

    w.correlation_factor = Eigen::LLT<Eigen::MatrixXd>(spec.attr_correlation).matrixL();
    return w;
}

inline void check_prompt(const World& w, int prompt_class) {
    require(prompt_class >= 0 && prompt_class < w.spec.n_prompt_classes,
            "prompt_class " + std::to_string(prompt_class) + " out of range [0," +
                std::to_string(w.spec.n_prompt_classes) + ")",
            "prompt_class");
}

/// Gaussian-copula samples: correlated normals pushed through the normal CDF.
inline std::vector<SliderVector> sample_biased_attributes(const World& w, int count, uint64_t seed) {
    require(count >= 1, "count must be >= 1", "count");
    const int n = w.spec.n_attributes;
    Rng rng(seed);
    std::vector<SliderVector> out;
    out.reserve(static_cast<size_t>(count));
    Eigen::VectorXd g(n);
    for (int k = 0; k < count; ++k) {
        for (int i = 0; i < n; ++i)
            g(i) = rng.normal();
        Eigen::VectorXd x = w.correlation_factor * g;
        SliderVector v{Eigen::VectorXd(n)};
        for (int i = 0; i < n; ++i)
            v.values(i) = std::clamp(detail::standard_normal_cdf(x(i)), 0.0, 1.0);
        out.push_back(std::move(v));
    }
    return out;
}

inline std::vector<SliderVector> sample_uniform_attributes(int n_attributes, int count, uint64_t seed) {
    require(count >= 1, "count must be >= 1", "count");
    Rng rng(seed);
    std::vector<SliderVector> out;
    out.reserve(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        SliderVector v{Eigen::VectorXd(n_attributes)};
        for (int i = 0; i < n_attributes; ++i)
            v.values(i) = rng.uniform();
        out.push_back(std::move(v));
    }
    return out;
}

inline std::vector<SliderVector> sample_uniform_attributes(const World& w, int count, uint64_t seed) {
    return sample_uniform_attributes(w.spec.n_attributes, count, seed);
}

/// c = Q * [s(v); z; 0] + b_p
inline ConditionLatent encode_latent(const World& w, const SliderVector& v, const IdentityVector& z,
                                     int prompt_class) {
    const int n = w.spec.n_attributes, k = w.spec.identity_dim, d = w.spec.latent_dim;
    check_prompt(w, prompt_class);
    require(v.values.size() == n, "slider vector has wrong length", "sliders");
    require(z.values.size() == k, "identity vector has wrong length", "identity");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) {
        require(v.values(i) >= 0.0 && v.values(i) <= 1.0, "slider value out of [0,1]", "sliders");
        double a = w.attr_scale[static_cast<size_t>(i)].apply(v.values(i));
        u(i) = w.spec.smooth_perturbation ? detail::perturb(a) : a;
    }
    for (int i = 0; i < k; ++i) {
        require(z.values(i) >= -1.0 && z.values(i) <= 1.0, "identity value out of [-1,1]", "identity");
        u(n + i) = z.values(i);
    }
    return {w.mixing * u + w.prompt_offsets[static_cast<size_t>(prompt_class)]};
}

/// Qᵀ(c - b_p): the world's internal coordinates of a latent.
inline Eigen::VectorXd unmix(const World& w, const ConditionLatent& c, int prompt_class) {
    check_prompt(w, prompt_class);
    require(c.values.size() == w.spec.latent_dim, "latent has wrong length", "latent");
    return w.mixing.transpose() * (c.values - w.prompt_offsets[static_cast<size_t>(prompt_class)]);
}

/// Attribute read-out before clamping to [0,1].
inline Eigen::VectorXd read_attributes_raw(const World& w, const ConditionLatent& c, int prompt_class) {
    Eigen::VectorXd u = unmix(w, c, prompt_class);
    Eigen::VectorXd v(w.spec.n_attributes);
    for (int i = 0; i < v.size(); ++i) {
        double a = w.spec.smooth_perturbation ? detail::unperturb(u(i)) : u(i);
        v(i) = w.attr_scale[static_cast<size_t>(i)].invert(a);
    }
    return v;
}

inline SliderVector read_attributes(const World& w, const ConditionLatent& c, int prompt_class) {
    return {read_attributes_raw(w, c, prompt_class).cwiseMax(0.0).cwiseMin(1.0)};
}

inline IdentityVector read_identity(const World& w, const ConditionLatent& c, int prompt_class) {
    Eigen::VectorXd u = unmix(w, c, prompt_class);
    return {u.segment(w.spec.n_attributes, w.spec.identity_dim).cwiseMax(-1.0).cwiseMin(1.0)};
}

// ---------------------------------------------------------------------------
// Rendering

/// Attribute- and identity-driven drawing parameters of the face glyph.
///
/// Attribute mapping (missing attributes read as 0.5):
///   0 age      -> face_width in [70, 100], wrinkle_count in {0..6}
///   1 smile    -> mouth_curvature in [-20, 20]
///   2 surprise -> eye_openness in [2, 12]
///   3 sadness  -> brow_angle in [0, 20] degrees
///   4 anger    -> brow_furrow in [0, 8]
/// Identity: z0 -> hue in [0, 360), z1 -> outline roundness in [0.2, 1],
/// z2 -> skin lightness in [55, 85] (defaults when K is small).
struct FaceGlyph {
    double face_width = 85;
    int wrinkle_count = 3;
    double mouth_curvature = 0;
    double eye_openness = 7;
    double brow_angle = 10;
    double brow_furrow = 4;
    double hue = 180;
    double roundness = 0.6;
    double lightness = 70;

    static constexpr double max_mouth_curvature = 20.0;
};

inline FaceGlyph glyph_params(const SliderVector& v, const IdentityVector& z) {
    auto attr = [&](int i) { return i < v.values.size() ? v.values(i) : 0.5; };
    auto ident = [&](int i) { return i < z.values.size() ? z.values(i) : 0.0; };
    FaceGlyph g;
    g.face_width = 70.0 + 30.0 * attr(0);
    g.wrinkle_count = static_cast<int>(std::lround(6.0 * attr(0)));
    g.mouth_curvature = -FaceGlyph::max_mouth_curvature + 2.0 * FaceGlyph::max_mouth_curvature * attr(1);
    g.eye_openness = 2.0 + 10.0 * attr(2);
    g.brow_angle = 20.0 * attr(3);
    g.brow_furrow = 8.0 * attr(4);
    g.hue = std::fmod(180.0 * (ident(0) + 1.0), 360.0);
    g.roundness = 0.6 + 0.4 * ident(1);
    g.lightness = 70.0 + 15.0 * ident(2);
    return g;
}

inline FaceGlyph glyph_params(const World& w, const ConditionLatent& c, int prompt_class) {
    return glyph_params(read_attributes(w, c, prompt_class), read_identity(w, c, prompt_class));
}

struct RenderDoc {
    std::string svg;
};

inline RenderDoc render(const FaceGlyph& g) {
    auto f = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    const double cx = 100, cy = 100;
    const double rx = g.face_width, ry = 90;
    const double corner = g.roundness * rx;
    std::ostringstream os;
    os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << "\n"
       << R"(<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="200" height="200" viewBox="-20 -20 240 240">)"
       << "\n";
    os << "  <rect x=\"" << f(cx - rx) << "\" y=\"" << f(cy - ry) << "\" width=\"" << f(2 * rx) << "\" height=\""
       << f(2 * ry) << "\" rx=\"" << f(corner) << "\" ry=\"" << f(corner) << "\" fill=\"hsl(" << f(g.hue) << ",45%,"
       << f(g.lightness) << "%)\" stroke=\"#333\" stroke-width=\"3\"/>\n";
    for (int i = 0; i < g.wrinkle_count; ++i) {
        double y = cy - 60 + 6 * i;
        os << "  <path class=\"wrinkle\" d=\"M " << f(cx - 30) << " " << f(y) << " Q " << f(cx) << " " << f(y - 3)
           << " " << f(cx + 30) << " " << f(y) << "\" stroke=\"#765\" fill=\"none\" stroke-width=\"1\"/>\n";
    }
    for (int side : {-1, 1}) {
        double ex = cx + side * 35;
        os << "  <ellipse class=\"eye\" cx=\"" << f(ex) << "\" cy=\"" << f(cy - 15) << "\" rx=\"12\" ry=\""
           << f(g.eye_openness) << "\" fill=\"#fff\" stroke=\"#222\" stroke-width=\"2\"/>\n";
        // outer ends drop with sadness, inner ends drop with furrow
        double inner_y = cy - 35 + g.brow_furrow;
        double outer_y = cy - 35 + 34.0 * std::tan(g.brow_angle * M_PI / 180.0);
        os << "  <path class=\"brow\" d=\"M " << f(cx + side * 18) << " " << f(inner_y) << " L "
           << f(cx + side * 52) << " " << f(outer_y) << "\" stroke=\"#222\" stroke-width=\"4\" fill=\"none\"/>\n";
    }
    os << "  <path class=\"mouth\" data-curvature=\"" << f(g.mouth_curvature) << "\" d=\"M " << f(cx - 35) << " "
       << f(cy + 45) << " Q " << f(cx) << " " << f(cy + 45 + 2 * g.mouth_curvature) << " " << f(cx + 35) << " "
       << f(cy + 45) << "\" stroke=\"#822\" stroke-width=\"4\" fill=\"none\"/>\n";
    os << "</svg>\n";
    return {os.str()};
}

inline RenderDoc render(const World& w, const ConditionLatent& c, int prompt_class) {
    return render(glyph_params(w, c, prompt_class));
}

// ---------------------------------------------------------------------------
// Dataset file: "CSW1", little-endian.
//
//   magic[4] | u32 version | u32 N | u32 D | u32 P | u32 K | u32 L | u32 token_dim
//   | f64 spec_obs_noise_sigma | u64 world_seed | u32 smooth | f64[N*N] correlation
//   | u64 spec_hash | f64 dataset_sigma | u64 dataset_seed | u64 record_count
//   | records: u32 prompt_class, f32[N] sliders, f32[K] identity, f32[D] latent

struct DatasetRecord {
    int prompt_class = 0;
    SliderVector sliders;
    IdentityVector identity;
    ConditionLatent latent;
};

struct Dataset {
    WorldSpec spec;
    uint64_t spec_hash = 0;
    double noise_sigma = 0.0;
    uint64_t seed = 0;
    std::vector<DatasetRecord> records;
};

namespace detail {

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

inline bool host_is_little_endian() {
    const uint16_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : m_os(os) {
        if (!host_is_little_endian())
            throw io_error("big-endian hosts are not supported");
    }
    template <typename T>
    void put(T v) {
        m_os.write(reinterpret_cast<const char*>(&v), sizeof v);
        m_hash.update(&v, sizeof v);
    }
    void bytes(const void* data, size_t n) {
        m_os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        m_hash.update(data, n);
    }
    uint64_t content_hash() const { return m_hash.digest(); }

private:
    std::ostream& m_os;
    Fnv1a m_hash;
};

class BinaryReader {
public:
    BinaryReader(std::istream& is, std::string what) : m_is(is), m_what(std::move(what)) {
        if (!host_is_little_endian())
            throw io_error("big-endian hosts are not supported");
    }
    template <typename T>
    T get() {
        T v;
        m_is.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!m_is)
            throw io_error("truncated " + m_what);
        return v;
    }
    void bytes(void* data, size_t n) {
        m_is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (!m_is)
            throw io_error("truncated " + m_what);
    }

private:
    std::istream& m_is;
    std::string m_what;
};

} // namespace detail

inline Dataset make_dataset(const World& w, int count, double noise_sigma, uint64_t seed) {
    require(count >= 1, "count must be >= 1", "count");
    require(noise_sigma >= 0.0, "noise sigma must be >= 0", "obs_noise_sigma");
    Dataset ds;
    ds.spec = w.spec;
    ds.spec_hash = w.hash;
    ds.noise_sigma = noise_sigma;
    ds.seed = seed;
    auto sliders = sample_biased_attributes(w, count, derive_seed(seed, {10}));
    Rng rng(derive_seed(seed, {11}));
    const int k = w.spec.identity_dim, d = w.spec.latent_dim;
    ds.records.reserve(static_cast<size_t>(count));
    for (int r = 0; r < count; ++r) {
        DatasetRecord rec;
        rec.prompt_class = static_cast<int>(rng.index(static_cast<uint64_t>(w.spec.n_prompt_classes)));
        rec.sliders = sliders[static_cast<size_t>(r)];
        rec.identity.values.resize(k);
        for (int i = 0; i < k; ++i)
            rec.identity.values(i) = rng.uniform(-1.0, 1.0);
        rec.latent = encode_latent(w, rec.sliders, rec.identity, rec.prompt_class);
        for (int i = 0; i < d; ++i)
            rec.latent.values(i) += noise_sigma * rng.normal();
        // values are stored as f32; keep the in-memory copy identical to what is written
        rec.sliders.values = rec.sliders.values.cast<float>().cast<double>();
        rec.identity.values = rec.identity.values.cast<float>().cast<double>();
        rec.latent.values = rec.latent.values.cast<float>().cast<double>();
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

/// Writes the dataset and returns the FNV-1a hash of the file contents.
inline uint64_t write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw io_error("cannot open " + path.string() + " for writing");
    detail::BinaryWriter w(os);
    const auto& s = ds.spec;
    w.bytes("CSW1", 4);
    w.put<uint32_t>(1);
    for (int v : {s.n_attributes, s.latent_dim, s.n_prompt_classes, s.identity_dim, s.text_len, s.token_dim})
        w.put<uint32_t>(static_cast<uint32_t>(v));
    w.put<double>(s.obs_noise_sigma);
    w.put<uint64_t>(s.world_seed);
    w.put<uint32_t>(s.smooth_perturbation ? 1u : 0u);
    for (int i = 0; i < s.n_attributes; ++i)
        for (int j = 0; j < s.n_attributes; ++j)
            w.put<double>(s.attr_correlation(i, j));
    w.put<uint64_t>(ds.spec_hash);
    w.put<double>(ds.noise_sigma);
    w.put<uint64_t>(ds.seed);
    w.put<uint64_t>(ds.records.size());
    for (const auto& r : ds.records) {
        w.put<uint32_t>(static_cast<uint32_t>(r.prompt_class));
        for (auto* vec : {&r.sliders.values, &r.identity.values, &r.latent.values})
            for (int i = 0; i < vec->size(); ++i)
                w.put<float>(static_cast<float>((*vec)(i)));
    }
    os.flush();
    if (!os)
        throw io_error("write failed for " + path.string());
    return w.content_hash();
}

inline uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw io_error("cannot open " + path.string());
    Fnv1a h;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        h.update(buf, static_cast<size_t>(is.gcount()));
    }
    return h.digest();
}

/// Reads a dataset; when `expected_hash` is nonzero the header hash must match it.
inline Dataset read_dataset(const std::filesystem::path& path, uint64_t expected_hash = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw io_error("cannot open " + path.string());
    detail::BinaryReader r(is, "dataset " + path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "CSW1", 4) != 0)
        throw io_error(path.string() + " is not a CSW1 dataset");
    if (r.get<uint32_t>() != 1)
        throw io_error("unsupported dataset version in " + path.string());
    Dataset ds;
    WorldSpec& s = ds.spec;
    s.n_attributes = static_cast<int>(r.get<uint32_t>());
    s.latent_dim = static_cast<int>(r.get<uint32_t>());
    s.n_prompt_classes = static_cast<int>(r.get<uint32_t>());
    s.identity_dim = static_cast<int>(r.get<uint32_t>());
    s.text_len = static_cast<int>(r.get<uint32_t>());
    s.token_dim = static_cast<int>(r.get<uint32_t>());
    s.obs_noise_sigma = r.get<double>();
    s.world_seed = r.get<uint64_t>();
    s.smooth_perturbation = r.get<uint32_t>() != 0;
    if (s.n_attributes < 1 || s.n_attributes > 4096 || s.latent_dim < 1 || s.latent_dim > (1 << 20))
        throw io_error("corrupt dataset header in " + path.string());
    s.attr_correlation.resize(s.n_attributes, s.n_attributes);
    for (int i = 0; i < s.n_attributes; ++i)
        for (int j = 0; j < s.n_attributes; ++j)
            s.attr_correlation(i, j) = r.get<double>();
    ds.spec_hash = r.get<uint64_t>();
    if (ds.spec_hash != spec_hash(s))
        throw io_error("dataset header is inconsistent with its spec hash in " + path.string());
    if (expected_hash != 0 && ds.spec_hash != expected_hash)
        throw validation_error("dataset spec hash " + hex64(ds.spec_hash) + " does not match world " +
                                   hex64(expected_hash),
                               "spec_hash");
    ds.noise_sigma = r.get<double>();
    ds.seed = r.get<uint64_t>();
    const uint64_t count = r.get<uint64_t>();
    const int n = s.n_attributes, k = s.identity_dim, d = s.latent_dim;
    std::vector<float> buf(static_cast<size_t>(n + k + d));
    ds.records.reserve(static_cast<size_t>(count));
    for (uint64_t i = 0; i < count; ++i) {
        DatasetRecord rec;
        rec.prompt_class = static_cast<int>(r.get<uint32_t>());
        if (rec.prompt_class < 0 || rec.prompt_class >= s.n_prompt_classes)
            throw io_error("corrupt record " + std::to_string(i) + " in " + path.string());
        r.bytes(buf.data(), buf.size() * sizeof(float));
        Eigen::Map<Eigen::VectorXf> all(buf.data(), static_cast<Eigen::Index>(buf.size()));
        rec.sliders.values = all.segment(0, n).cast<double>();
        rec.identity.values = all.segment(n, k).cast<double>();
        rec.latent.values = all.segment(n + k, d).cast<double>();
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

inline uint64_t generate_dataset(const World& w, int count, double noise_sigma, uint64_t seed,
                                 const std::filesystem::path& path) {
    return write_dataset(make_dataset(w, count, noise_sigma, seed), path);
}

inline void save_world(const WorldSpec& spec, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw io_error("cannot open " + path.string() + " for writing");
    os << to_json(spec).dump(2) << "\n";
    if (!os)
        throw io_error("write failed for " + path.string());
}

inline WorldSpec load_world_spec(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw io_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("cannot parse world file " + path.string() + ": " + e.what());
    }
    return world_spec_from_json(j);
}

} // namespace compslider
