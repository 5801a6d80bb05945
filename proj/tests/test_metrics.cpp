// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "compslider/metrics.hpp"

using namespace compslider;

namespace {

const World& default_world() {
    static const World w = build_world(default_world_spec());
    return w;
}

Eigen::VectorXd seeded_identity(uint64_t seed, int k, double bound = 0.8) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::VectorXd z(k);
    for (int i = 0; i < k; ++i)
        z(i) = u(g);
    return z;
}

/// Encodes each slider row through `warp` with an identity fixed by the seed.
template <typename Warp>
SweepGenerator encoding_generator(const World& w, Warp warp) {
    return [&w, warp](int pc, const std::vector<Eigen::VectorXd>& sliders, uint64_t seed) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(sliders.size()), w.latent_dim());
        const Eigen::VectorXd z = seeded_identity(seed, w.identity_dim());
        for (size_t r = 0; r < sliders.size(); ++r)
            out.row(static_cast<Eigen::Index>(r)) =
                encode_latent(w, {warp(sliders[r])}, {z}, pc).values.transpose();
        return out;
    };
}

SweepProtocol protocol(int prompts) {
    SweepProtocol p;
    p.n_prompts = prompts;
    return p;
}

SweepResults hand_line(const std::vector<double>& target_scores) {
    SweepResults r;
    r.n_attributes = 2;
    r.identity_dim = 1;
    SweepLine l;
    l.attribute = 0;
    for (size_t k = 0; k < target_scores.size(); ++k) {
        SweepCell c;
        c.sliders = Eigen::Vector2d(static_cast<double>(k) / (target_scores.size() - 1), 0.5);
        c.scores = Eigen::Vector2d(target_scores[k], 0.5);
        c.identity = Eigen::VectorXd::Zero(1);
        c.latent = Eigen::VectorXd::Zero(1);
        l.cells.push_back(c);
    }
    r.lines.push_back(l);
    return r;
}

} // namespace

TEST(Sweep, LayoutAndCellCount) {
    const World& w = default_world();
    int calls = 0;
    auto ident = encoding_generator(w, [](const Eigen::VectorXd& v) { return v; });
    SweepGenerator counting = [&](int pc, const std::vector<Eigen::VectorXd>& s, uint64_t seed) {
        ++calls;
        EXPECT_EQ(s.size(), 25u);
        return ident(pc, s, seed);
    };
    const auto r = run_sweep(counting, w, protocol(2));
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(r.cell_count(), 50u);
    ASSERT_EQ(r.lines.size(), 10u);
    for (const auto& l : r.lines) {
        EXPECT_EQ(l.prompt_class, l.prompt % 8);
        EXPECT_EQ(l.seed, r.protocol.prompt_seed(l.prompt));
        for (size_t k = 0; k < l.cells.size(); ++k)
            for (int i = 0; i < 5; ++i)
                EXPECT_EQ(l.cells[k].sliders(i), i == l.attribute ? 0.25 * k : 0.5);
    }
}

TEST(Metrics, OracleGeneratorIsPerfect) {
    const World& w = default_world();
    const auto r = run_sweep(encoding_generator(w, [](const Eigen::VectorXd& v) { return v; }), w, protocol(4));
    EXPECT_DOUBLE_EQ(continuity(r), 100.0);
    EXPECT_NEAR(scope(r), 100.0, 1e-9);
    EXPECT_DOUBLE_EQ(consistency(r), 100.0);
    EXPECT_DOUBLE_EQ(entanglement(r), 0.0);
    EXPECT_LE(mean_abs_error(r), 1e-9);
}

TEST(Metrics, ReversedGenerator) {
    const World& w = default_world();
    const auto r = run_sweep(encoding_generator(w, [](const Eigen::VectorXd& v) { return (1.0 - v.array()).matrix(); }),
                             w, protocol(2));
    EXPECT_DOUBLE_EQ(continuity(r), 0.0);
    EXPECT_DOUBLE_EQ(scope(r), 0.0); // clamped
    EXPECT_DOUBLE_EQ(entanglement(r), 0.0);
}

TEST(Metrics, ConstantGenerator) {
    const World& w = default_world();
    const auto r = run_sweep(
        encoding_generator(w, [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Constant(v.size(), 0.4); }), w,
        protocol(2));
    EXPECT_DOUBLE_EQ(continuity(r), 0.0); // ties are not increases
    EXPECT_DOUBLE_EQ(scope(r), 0.0);
    EXPECT_DOUBLE_EQ(consistency(r), 100.0);
    EXPECT_DOUBLE_EQ(entanglement(r), 0.0);
}

TEST(Metrics, PartialScope) {
    const World& w = default_world();
    const auto r = run_sweep(encoding_generator(w, [](const Eigen::VectorXd& v) { return (0.2 + 0.6 * v.array()).matrix(); }),
                             w, protocol(2));
    EXPECT_NEAR(scope(r), 60.0, 1e-9);
    EXPECT_DOUBLE_EQ(continuity(r), 100.0);
}

TEST(Metrics, CopyCouplingIsFullyEntangled) {
    const World& w = default_world();
    // moving attribute a also moves a+1
    auto coupled = [](const Eigen::VectorXd& v) {
        Eigen::VectorXd o = v;
        for (Eigen::Index a = 0; a < v.size(); ++a)
            if (v(a) != 0.5)
                o((a + 1) % v.size()) = v(a);
        return o;
    };
    const auto r = run_sweep(encoding_generator(w, coupled), w, protocol(2));
    EXPECT_DOUBLE_EQ(entanglement(r), 100.0);
    EXPECT_DOUBLE_EQ(entanglement(r, 2.0), 0.0);
}

TEST(Metrics, JitteredIdentityConsistencyMatchesClosedForm) {
    // identity components jitter uniformly by +-s per cell; a line is consistent when
    // every component's range over V cells is <= delta:
    // P(range <= delta) = V x^(V-1) - (V-1) x^V with x = delta / (2s), per component.
    const World& w = default_world();
    const double s = 0.06, delta = 0.1;
    SweepGenerator jitter = [&](int pc, const std::vector<Eigen::VectorXd>& sliders, uint64_t seed) {
        std::mt19937_64 g(seed ^ 0x5eed);
        std::uniform_real_distribution<double> u(-s, s);
        const Eigen::VectorXd z0 = seeded_identity(seed, w.identity_dim());
        Eigen::MatrixXd out(static_cast<Eigen::Index>(sliders.size()), w.latent_dim());
        for (size_t r = 0; r < sliders.size(); ++r) {
            Eigen::VectorXd z = z0;
            for (Eigen::Index i = 0; i < z.size(); ++i)
                z(i) += u(g);
            out.row(static_cast<Eigen::Index>(r)) = encode_latent(w, {sliders[r]}, {z}, pc).values.transpose();
        }
        return out;
    };
    const auto r = run_sweep(jitter, w, protocol(80));
    const double x = delta / (2 * s), V = 5;
    const double per_component = V * std::pow(x, V - 1) - (V - 1) * std::pow(x, V);
    const double expected = 100.0 * std::pow(per_component, w.identity_dim());
    const double se = 100.0 * std::sqrt(expected / 100 * (1 - expected / 100) / r.lines.size());
    EXPECT_NEAR(consistency(r, delta), expected, 4 * se);
    EXPECT_DOUBLE_EQ(consistency(r, 1e9), 100.0);
    EXPECT_DOUBLE_EQ(consistency(r, 2 * s), 100.0); // range never exceeds 2s
}

TEST(Metrics, ToleranceMonotonicity) {
    const World& w = default_world();
    SweepGenerator noisy = [&](int pc, const std::vector<Eigen::VectorXd>& sliders, uint64_t seed) {
        std::mt19937_64 g(seed);
        std::normal_distribution<double> n(0.0, 0.1);
        Eigen::MatrixXd out(static_cast<Eigen::Index>(sliders.size()), w.latent_dim());
        for (size_t r = 0; r < sliders.size(); ++r) {
            Eigen::VectorXd c = encode_latent(w, {sliders[r]}, {Eigen::VectorXd::Zero(8)}, pc).values;
            for (Eigen::Index i = 0; i < c.size(); ++i)
                c(i) += n(g);
            out.row(static_cast<Eigen::Index>(r)) = c.transpose();
        }
        return out;
    };
    const auto r = run_sweep(noisy, w, protocol(10));
    double prev_c = -1, prev_e = 101;
    for (double tol : {0.01, 0.05, 0.1, 0.2, 0.4, 1.0, 3.0}) {
        const double c = consistency(r, tol), e = entanglement(r, tol);
        EXPECT_GE(c, prev_c);
        EXPECT_LE(e, prev_e);
        prev_c = c;
        prev_e = e;
    }
    EXPECT_DOUBLE_EQ(prev_c, 100.0);
    EXPECT_DOUBLE_EQ(prev_e, 0.0);
}

TEST(Metrics, PairCountingOnHandBuiltLine) {
    const auto r = hand_line({0.1, 0.3, 0.2, 0.4, 0.5});
    EXPECT_DOUBLE_EQ(continuity(r), 90.0);       // 9 of 10 ordered pairs increase
    EXPECT_DOUBLE_EQ(continuity(r, true), 75.0); // 3 of 4 adjacent pairs
    EXPECT_NEAR(scope(r), 40.0, 1e-12);
    // |score - slider| over both attributes: target errors .1,.05,.3,.35,.5 and zeros
    EXPECT_NEAR(mean_abs_error(r), (0.1 + 0.05 + 0.3 + 0.35 + 0.5) / 10.0, 1e-12);
}

TEST(Report, AggregatesAndRoundTrips) {
    const World& w = default_world();
    const auto r = run_sweep(encoding_generator(w, [](const Eigen::VectorXd& v) { return (0.2 + 0.6 * v.array()).matrix(); }),
                             w, protocol(3));
    const auto rep = report(r, MetricOptions{});
    EXPECT_EQ(rep.cells, 75);
    EXPECT_EQ(rep.overall.lines, 15);
    EXPECT_EQ(rep.overall.pairs, 150);
    ASSERT_EQ(rep.per_attribute.size(), 5u);
    EXPECT_EQ(rep.attribute_names[1], "smile");
    EXPECT_NEAR(rep.overall.scope, scope(r), 1e-12);
    EXPECT_NEAR(rep.per_attribute[2].scope, 60.0, 1e-9);
    const auto j = to_json(rep);
    EXPECT_EQ(j["schema_version"], "compslider.report/v1");
    EXPECT_TRUE(metrics_report_from_json(nlohmann::json::parse(j.dump())) == rep);
    auto bad = j;
    bad["schema_version"] = "compslider.report/v0";
    EXPECT_THROW(metrics_report_from_json(bad), validation_error);
    const auto table = format_table(rep);
    EXPECT_EQ(table.rfind("Config    Cont.%  Cons.%  Scope%  Entang.%\n", 0), 0u);
    EXPECT_NE(table.find("overall   100.00  100.00   60.00      0.00"), std::string::npos);
}

TEST(Protocol, ValidationAndGrid) {
    auto p = protocol(1);
    EXPECT_EQ(SweepProtocol::even_grid(5), (std::vector<double>{0, 0.25, 0.5, 0.75, 1}));
    p.values = {0.0, 0.5, 0.5};
    EXPECT_THROW(p.validate(), validation_error);
    p.values = {0.0, 1.2};
    EXPECT_THROW(p.validate(), validation_error);
    p = protocol(0);
    EXPECT_THROW(p.validate(), validation_error);
    EXPECT_THROW(consistency(SweepResults{}, 0.0), validation_error);
    const auto q = sweep_protocol_from_json(to_json(protocol(7)));
    EXPECT_EQ(q.n_prompts, 7);
    EXPECT_EQ(q.values.size(), 5u);
}
