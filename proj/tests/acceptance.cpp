// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: prints one PASS/FAIL line per criterion and exits 1 if any
// criterion fails. Training runs are cached under the work directory and
// reused only when their manifests match the current config, world and data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "compslider/commands.hpp"
#include "compslider/config.hpp"
#include "compslider/service.hpp"

#ifdef COMPSLIDER_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

using namespace compslider;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - m_start).count();
    }

private:
    std::chrono::steady_clock::time_point m_start = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Accumulates sub-checks; the first failure message is kept.
struct Checks {
    bool ok = true;
    std::vector<std::string> failures;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            failures.push_back(what);
        }
    }
    std::string summary(const std::string& good) const {
        if (ok)
            return good;
        std::string s;
        for (size_t i = 0; i < failures.size() && i < 4; ++i)
            s += (i ? "; " : "") + failures[i];
        if (failures.size() > 4)
            s += fmt("; (+%zu more)", failures.size() - 4);
        return s;
    }
};

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is)
        throw io_error("cannot open " + p.string());
    return json::parse(is);
}

// ---------------------------------------------------------------------------
// Exact-oracle criteria

Outcome p1_embedding() {
    Clock clock;
    Checks c;
    const int dim = 64;
    const Mat<double> zero = positional_encode<double>(std::vector<double>{0.0}, dim);
    for (Eigen::Index j = 0; j < zero.cols(); ++j)
        c.expect(std::abs(zero(0, j) - (j % 2 == 0 ? 1.0 : 0.0)) <= 1e-6, fmt("v=0 channel %ld", (long)j));
    const Mat<double> one = positional_encode<double>(std::vector<double>{1.0}, dim);
    c.expect(std::abs(one(0, 0) - std::cos(1.0)) <= 1e-6, "cos(1) at j=0");
    c.expect(std::abs(one(0, 1) - std::sin(1.0)) <= 1e-6, "sin(1) at j=1");

    std::mt19937_64 gen(20260101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> a(10000), b(10000);
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = u(gen);
        b[i] = u(gen);
    }
    const Mat<double> pa = positional_encode<double>(a, dim), pb = positional_encode<double>(b, dim);
    int64_t violations = 0;
    for (Eigen::Index i = 0; i < pa.rows(); ++i) {
        const double dv = std::abs(a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]);
        for (Eigen::Index j = 0; j < pa.cols(); ++j)
            violations += std::abs(pa(i, j) - pb(i, j)) > dv + 1e-12;
    }
    c.expect(violations == 0, fmt("%lld Lipschitz violations", (long long)violations));
    const double s = clock.seconds();
    c.expect(s < 1.0, fmt("took %.3f s", s));
    return {c.ok, c.summary(fmt("identity row, cos/sin(1), 10000-pair Lipschitz probe clean (%.3f s)", s))};
}

Outcome p2_buckets() {
    Clock clock;
    Checks c;
    const int B = 20;
    c.expect(bucketize(-1.0, B) == 0, "-1 -> 0");
    c.expect(bucketize(1.0, B) == B - 1, "+1 -> B-1");
    c.expect(bucketize(0.0, B) == B / 2, "0 -> B/2");
    int prev = -1;
    std::set<int> seen;
    for (int k = 0; k <= 10000; ++k) {
        const double d = -1.0 + 2.0 * k / 10000.0;
        const int b = bucketize(d, B);
        c.expect(b >= prev, fmt("not monotone at %.4f", d));
        c.expect(b >= 0 && b < B, fmt("out of range at %.4f", d));
        prev = b;
        seen.insert(b);
    }
    c.expect(static_cast<int>(seen.size()) == B, fmt("grid hits %zu buckets", seen.size()));
    const double s = clock.seconds();
    c.expect(s < 1.0, fmt("took %.3f s", s));
    return {c.ok, c.summary(fmt("boundaries and 10001-point monotone grid over %d buckets (%.3f s)", B, s))};
}

Outcome p3_sampler() {
    Clock clock;
    Checks c;
    Eigen::RowVectorXd target(8);
    target << 0.3, -1.2, 2.0, 0.0, 5.0, -0.7, 0.01, -3.5;
    double worst = 0.0;
    for (int T : {10, 100})
        for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear}) {
            const auto sched = make_schedule(T, kind);
            auto oracle = [&](const Mat<double>& ct, int) { return Mat<double>(target.replicate(ct.rows(), 1)); };
            const std::vector<uint64_t> seeds = {1, 2, 3, 4};
            const Mat<double> out = sample_batch<double>(oracle, sched, SamplerConfig{}, seeds, 8);
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                const double e = (out.row(r) - target).cwiseAbs().maxCoeff();
                worst = std::max(worst, e);
                c.expect(e <= 1e-6, fmt("T=%d %s error %.3g", T, to_string(kind).c_str(), e));
            }
        }
    const double s = clock.seconds();
    c.expect(s < 5.0, fmt("took %.3f s", s));
    return {c.ok, c.summary(fmt("oracle c0 recovered for T in {10,100}, max error %.2g (%.3f s)", worst, s))};
}

Outcome p4_gradients() {
    Clock clock;
    Checks c;
    WorldSpec spec;
    spec.n_attributes = 3;
    spec.latent_dim = 16;
    spec.n_prompt_classes = 3;
    spec.identity_dim = 4;
    spec.text_len = 4;
    spec.token_dim = 16;
    spec.world_seed = 11;
    spec.attr_correlation = default_correlation(3);
    const World world = build_world(spec);
    const Dataset ds = make_dataset(world, 200, 0.01, 3);
    DenoiserConfig mcfg;
    mcfg.blocks = 2;
    mcfg.dim = 16;
    mcfg.heads = 2;
    mcfg.n_sliders = 3;
    mcfg.text_len = 4;
    mcfg.latent_dim = 16;
    mcfg.n_buckets = 5;
    TrainConfig tc;
    tc.batch_size = 4;
    tc.buckets = 5;
    tc.structure_threshold = 1.0; // gate open so the structure term is exercised
    const auto sched = make_schedule(100, ScheduleKind::cosine);
    Rng rng(5);
    const auto batch = make_batch<double>(world, ds.records, ds.records.size(), mcfg, sched, tc, rng);

    auto params = init_params<double>(mcfg, 1);
    std::mt19937_64 gen(2);
    std::normal_distribution<double> n01(0.0, 0.2);
    params.visit([&](const std::string&, Mat<double>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = n01(gen);
    });

    struct Term {
        const char* name;
        double wd, wc, ws;
    };
    double worst = 0.0;
    int tensors = 0;
    for (const Term term : {Term{"diffusion", 1, 0, 0}, Term{"disentanglement", 0, 1, 0}, Term{"structure", 0, 0, 1}}) {
        TrainConfig cfg = tc;
        cfg.weight_diffusion = term.wd;
        cfg.weight_disentanglement = term.wc;
        cfg.weight_structure = term.ws;
        auto grads = params.zeros_like();
        compute_losses(params, batch, cfg, grads);
        std::map<std::string, Mat<double>*> g;
        grads.visit([&](const std::string& name, Mat<double>& m) { g[name] = &m; });
        auto loss = [&] {
            auto scratch = params.zeros_like();
            return compute_losses(params, batch, cfg, scratch).total;
        };
        params.visit([&](const std::string& name, Mat<double>& m) {
            // every entry of small tensors, a fixed random subset of large ones
            std::vector<Eigen::Index> idx;
            if (m.size() <= 64) {
                for (Eigen::Index i = 0; i < m.size(); ++i)
                    idx.push_back(i);
            } else {
                std::uniform_int_distribution<Eigen::Index> pick(0, m.size() - 1);
                for (int k = 0; k < 64; ++k)
                    idx.push_back(pick(gen));
            }
            double num = 0.0, den = 0.0;
            for (const auto i : idx) {
                const double orig = m.data()[i], h = 1e-5;
                m.data()[i] = orig + h;
                const double lp = loss();
                m.data()[i] = orig - h;
                const double lm = loss();
                m.data()[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                const double an = g[name]->data()[i];
                num += (an - fd) * (an - fd);
                den += std::max(an * an, fd * fd);
            }
            const double rel = den > 1e-20 ? std::sqrt(num / den) : std::sqrt(num);
            worst = std::max(worst, rel);
            ++tensors;
            c.expect(rel <= 1e-3, fmt("%s / %s relative error %.3g", term.name, name.c_str(), rel));
        });
    }

    // diffusion + structure must leave the classifier untouched
    TrainConfig cfg = tc;
    cfg.weight_disentanglement = 0.0;
    auto grads = params.zeros_like();
    compute_losses(params, batch, cfg, grads);
    bool routed = true;
    grads.visit([&](const std::string& name, Mat<double>& m) {
        if (name.rfind("classifier.", 0) == 0)
            routed = routed && m.isZero(0.0);
    });
    c.expect(routed, "classifier receives diffusion/structure gradient");
    const double s = clock.seconds();
    c.expect(s < 120.0, fmt("took %.1f s", s));
    return {c.ok, c.summary(fmt("%d tensor checks, worst relative error %.2g, classifier routing exact (%.1f s)",
                                tensors, worst, s))};
}

Outcome p8_metric_oracles() {
    Clock clock;
    Checks c;
    const World world = build_world(default_world_spec());
    auto encoder = [&world](std::function<Eigen::VectorXd(const Eigen::VectorXd&)> warp, bool fresh_identity) {
        return SweepGenerator([&world, warp, fresh_identity](int pc, const std::vector<Eigen::VectorXd>& sliders,
                                                             uint64_t seed) {
            std::mt19937_64 gen(seed);
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            auto draw = [&] {
                Eigen::VectorXd z(world.identity_dim());
                for (Eigen::Index i = 0; i < z.size(); ++i)
                    z(i) = u(gen);
                return z;
            };
            const Eigen::VectorXd fixed = draw();
            Eigen::MatrixXd out(static_cast<Eigen::Index>(sliders.size()), world.latent_dim());
            for (size_t r = 0; r < sliders.size(); ++r)
                out.row(static_cast<Eigen::Index>(r)) =
                    encode_latent(world, {warp(sliders[r])}, {fresh_identity ? draw() : fixed}, pc)
                        .values.transpose();
            return out;
        });
    };
    SweepProtocol proto;
    proto.n_prompts = 20;

    const auto oracle = run_sweep(encoder([](const Eigen::VectorXd& v) { return v; }, false), world, proto);
    c.expect(continuity(oracle) == 100.0, fmt("oracle continuity %.2f", continuity(oracle)));
    c.expect(std::abs(scope(oracle) - 100.0) <= 1e-9, fmt("oracle scope %.6f", scope(oracle)));
    c.expect(entanglement(oracle) == 0.0, fmt("oracle entanglement %.2f", entanglement(oracle)));
    c.expect(consistency(oracle) == 100.0, fmt("oracle consistency %.2f", consistency(oracle)));
    double err = 0.0;
    for (const auto& l : oracle.lines)
        for (const auto& cell : l.cells)
            err = std::max(err, (cell.scores - cell.sliders).cwiseAbs().maxCoeff());
    c.expect(err <= 1e-6, fmt("oracle score error %.3g", err));

    const auto reversed = run_sweep(
        encoder([](const Eigen::VectorXd& v) { return Eigen::VectorXd((1.0 - v.array()).matrix()); }, false), world,
        proto);
    c.expect(continuity(reversed) == 0.0, fmt("reversed continuity %.2f", continuity(reversed)));
    c.expect(scope(reversed) == 0.0, fmt("reversed scope %.2f", scope(reversed)));

    const auto coupled = run_sweep(encoder(
                                       [](const Eigen::VectorXd& v) {
                                           Eigen::VectorXd o = v;
                                           for (Eigen::Index a = 0; a < v.size(); ++a)
                                               if (v(a) != 0.5)
                                                   o((a + 1) % v.size()) = v(a);
                                           return o;
                                       },
                                       false),
                                   world, proto);
    c.expect(entanglement(coupled) == 100.0, fmt("coupled entanglement %.2f", entanglement(coupled)));
    c.expect(entanglement(coupled, 2.0) == 0.0, "entanglement at eps=2 not 0");

    // fresh identity per value: a line survives with probability
    // (V x^(V-1) - (V-1) x^V)^K, x = delta/2, about 7e-37 here
    const auto shuffled = run_sweep(encoder([](const Eigen::VectorXd& v) { return v; }, true), world, proto);
    c.expect(consistency(shuffled) == 0.0, fmt("random-identity consistency %.2f", consistency(shuffled)));
    c.expect(consistency(shuffled, 1e9) == 100.0, "consistency at delta=inf not 100");

    const double s = clock.seconds();
    c.expect(s < 5.0, fmt("took %.3f s", s));
    return {c.ok, c.summary(fmt("oracle 100/100/0/100, reversed 0/0, coupled 100, random identity 0 (%.3f s)", s))};
}

// ---------------------------------------------------------------------------
// Training runs

std::string read_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Hash of the library sources; cached runs trained by other sources are retrained.
std::string build_stamp() {
    std::vector<fs::path> headers;
    for (const auto& e : fs::directory_iterator(fs::path(COMPSLIDER_SOURCE_DIR) / "include" / "compslider"))
        headers.push_back(e.path());
    std::sort(headers.begin(), headers.end());
    Fnv1a h;
    for (const auto& p : headers) {
        h.update(p.filename().string() + "\n");
        h.update(read_text(p));
    }
    return hex64(h.digest()) + "\n";
}

struct Run {
    std::string label;
    RunConfig cfg;
    fs::path checkpoint;
    json train; // train manifest
    json eval;  // eval manifest (desk protocol)
    MetricSummary overall;
    bool cached = false;
};

class Workspace {
public:
    Workspace(fs::path dir, RunConfig base, bool reuse) : m_dir(std::move(dir)), m_base(std::move(base)), m_reuse(reuse) {
        fs::create_directories(m_dir);
        m_world_path = m_dir / "world.json";
        m_data_path = m_dir / "data.csw";
        cmd_world_init(m_base, m_world_path);
        m_world = load_world(m_world_path);
        // regenerated on every run; cached checkpoints are tied to its hash
        const fs::path fresh = m_dir / "data.csw.new";
        cmd_data_gen(m_world_path, m_base.data, fresh);
        fs::rename(fresh, m_data_path);
        m_data_hash = hex64(file_hash(m_data_path));
    }

    const World& world() const { return m_world; }
    const fs::path& world_path() const { return m_world_path; }
    const fs::path& data_path() const { return m_data_path; }
    const fs::path& dir() const { return m_dir; }
    const RunConfig& base() const { return m_base; }

    Run ensure(const std::string& label, const RunConfig& cfg) {
        Run r;
        r.label = label;
        r.cfg = with_world(cfg, m_world.spec);
        const fs::path dir = m_dir / label;
        fs::create_directories(dir);
        r.checkpoint = dir / "model.csck";
        const fs::path tm = dir / "train.manifest.json", em = dir / "eval.manifest.json", stamp = dir / "build";
        if (m_reuse && fs::exists(tm) && fs::exists(em) && fs::exists(r.checkpoint) && fs::exists(stamp)) {
            try {
                const json t = read_json(tm), e = read_json(em);
                const std::string ck_hash = hex64(file_hash(r.checkpoint));
                const bool same = read_text(stamp) == build_stamp() && t.at("config") == to_json(r.cfg) &&
                                  t.at("dataset_hash") == m_data_hash &&
                                  t.at("spec_hash") == hex64(m_world.hash) && t.at("checkpoint_hash") == ck_hash &&
                                  e.at("checkpoint_hash") == ck_hash && e.at("protocol") == to_json(r.cfg.eval) &&
                                  e.at("options") == to_json(r.cfg.metrics) &&
                                  fs::exists(e.at("report_path").get<std::string>()) &&
                                  hex64(file_hash(e.at("report_path").get<std::string>())) == e.at("report_hash");
                if (same) {
                    r.train = t;
                    r.eval = e;
                    r.overall = metric_summary_from_json(e.at("overall"));
                    r.cached = true;
                    std::cerr << "[" << label << "] reusing cached run " << ck_hash << "\n";
                    return r;
                }
            } catch (const std::exception& ex) {
                std::cerr << "[" << label << "] cache unusable: " << ex.what() << "\n";
            }
        }
        fs::remove(tm);
        fs::remove(em);
        fs::remove(stamp);
        std::cerr << "[" << label << "] training " << r.cfg.train.total_steps << " steps\n";
        r.train = cmd_train(r.cfg, {m_world_path, m_data_path, r.checkpoint, dir / "metrics.ndjson"}, &std::cerr);
        write_manifest(r.train, tm);
        r.eval = cmd_eval({r.checkpoint, m_world_path, dir / "report.json", dir / "report.txt"}, r.cfg.eval,
                          r.cfg.metrics);
        write_manifest(r.eval, em);
        detail::write_text(stamp, build_stamp());
        r.overall = metric_summary_from_json(r.eval.at("overall"));
        return r;
    }

private:
    fs::path m_dir, m_world_path, m_data_path;
    RunConfig m_base;
    bool m_reuse;
    World m_world;
    std::string m_data_hash;
};

RunConfig variant(const RunConfig& base, bool clss, bool st, double tau) {
    RunConfig c = base;
    c.train.use_disentanglement = clss;
    c.train.use_structure = st;
    c.train.structure_threshold = tau;
    return c;
}

std::string summary_text(const MetricSummary& m) {
    return fmt("cont %.2f cons %.2f scope %.2f ent %.2f", m.continuity, m.consistency, m.scope, m.entanglement);
}

Outcome p5_convergence(const Workspace& ws, const Run& full) {
    Checks c;
    c.expect(full.cfg.train.total_steps >= 5000, "fewer than 5000 steps");
    const World& world = ws.world();
    const Checkpoint ck = load_checkpoint(full.checkpoint, world.hash);
    const Generator gen(ck, world);
    SweepProtocol proto = full.cfg.eval;
    proto.n_prompts = 20;
    proto.values = SweepProtocol::even_grid(5);
    const double mae = mean_abs_error(run_sweep(gen, proto));
    const double train_s = full.train.at("timings").at("train_seconds").get<double>();
    c.expect(mae <= 0.15, fmt("mean |read - v| = %.4f > 0.15", mae));
    c.expect(train_s <= 1800.0, fmt("training took %.0f s > 1800 s", train_s));
    return {c.ok, c.summary(fmt("mean |read - v| = %.4f over 20 prompts x 5 x 5", mae)) +
                      fmt(" (%d steps, train %.0f s%s)", full.cfg.train.total_steps, train_s,
                          full.cached ? ", cached" : "")};
}

Outcome p6_ablation(const Run& diff, const Run& clss, const Run& full) {
    Checks c;
    const double dent = diff.overall.entanglement - full.overall.entanglement;
    const double dcons = full.overall.consistency - clss.overall.consistency;
    c.expect(dent >= 5.0, fmt("entanglement(diff) - entanglement(full) = %.2f < 5", dent));
    c.expect(dcons >= 5.0, fmt("consistency(full) - consistency(diff+clss) = %.2f < 5", dcons));
    std::string detail = c.summary(fmt("entanglement drop %.2f, consistency gain %.2f", dent, dcons));
    detail += " | diff: " + summary_text(diff.overall) + " | diff+clss: " + summary_text(clss.overall) +
              " | full: " + summary_text(full.overall);
    return {c.ok, detail};
}

Outcome p7_threshold(const Run& tau01, const Run& tau05) {
    Checks c;
    c.expect(tau05.overall.consistency > tau01.overall.consistency,
             fmt("consistency %.2f at tau=0.5 not above %.2f at tau=0.1", tau05.overall.consistency,
                 tau01.overall.consistency));
    c.expect(tau05.overall.scope < tau01.overall.scope,
             fmt("scope %.2f at tau=0.5 not below %.2f at tau=0.1", tau05.overall.scope, tau01.overall.scope));
    std::string detail = c.summary("higher consistency and lower scope at tau=0.5");
    detail += " | tau=0.1: " + summary_text(tau01.overall) + " | tau=0.5: " + summary_text(tau05.overall);
    return {c.ok, detail};
}

Outcome p9_classifier(const Workspace& ws, const Run& full) {
    const World& world = ws.world();
    const Checkpoint ck = load_checkpoint(full.checkpoint, world.hash);
    const Dataset ds = read_dataset(ws.data_path());
    const size_t n_train = training_record_count(ds, full.cfg.train);
    const std::vector<DatasetRecord> hold(ds.records.begin() + static_cast<std::ptrdiff_t>(n_train), ds.records.end());
    const double acc = classifier_accuracy(ck, world, hold, 5000, 99);
    const double chance = 1.0 / full.cfg.train.buckets;
    return {acc >= 0.15, fmt("held-out bucket accuracy %.2f%% over %zu records (chance %.2f%%, need 15%%)",
                             100 * acc, hold.size(), 100 * chance)};
}

Outcome p10_determinism(Workspace& ws, const Run& full) {
    Clock clock;
    Checks c;
    // eval rerun against the checkpoint's recorded report
    const fs::path dir = ws.dir() / "determinism";
    fs::create_directories(dir);
    const auto e = cmd_eval({full.checkpoint, ws.world_path(), dir / "full.report.json", {}}, full.cfg.eval,
                            full.cfg.metrics);
    c.expect(e.at("report_hash") == full.eval.at("report_hash"),
             "eval rerun report hash " + e.at("report_hash").get<std::string>() + " != " +
                 full.eval.at("report_hash").get<std::string>());
    c.expect(e.at("checkpoint_hash") == full.train.at("checkpoint_hash"), "checkpoint hash drifted");

    // two fresh short trainings
    RunConfig shortcfg = full.cfg;
    shortcfg.train.total_steps = 200;
    shortcfg.train.warmup_steps = 40;
    shortcfg.finalize();
    SweepProtocol quick = shortcfg.eval;
    quick.n_prompts = 4;
    std::vector<std::string> ck_hashes, report_hashes;
    for (int k = 0; k < 2; ++k) {
        const fs::path ck = dir / fmt("short%d.csck", k);
        const auto t = cmd_train(shortcfg, {ws.world_path(), ws.data_path(), ck, {}}, nullptr);
        const auto r = cmd_eval({ck, ws.world_path(), dir / fmt("short%d.report.json", k), {}}, quick,
                                shortcfg.metrics);
        ck_hashes.push_back(t.at("checkpoint_hash"));
        report_hashes.push_back(r.at("report_hash"));
    }
    c.expect(ck_hashes[0] == ck_hashes[1], "200-step checkpoint hashes differ: " + ck_hashes[0] + " vs " + ck_hashes[1]);
    c.expect(report_hashes[0] == report_hashes[1],
             "200-step report hashes differ: " + report_hashes[0] + " vs " + report_hashes[1]);
    return {c.ok, c.summary(fmt("eval rerun report %s matches; 200-step reruns: checkpoint %s, report %s (%.0f s)",
                                e.at("report_hash").get<std::string>().c_str(), ck_hashes[0].c_str(),
                                report_hashes[0].c_str(), clock.seconds()))};
}

Outcome p11_service(const Workspace& ws, const Run& full) {
    Clock clock;
    Checks c;
    const World& world = ws.world();
    const Checkpoint ck = load_checkpoint(full.checkpoint, world.hash);
    const Generator gen(ck, world);
    ServiceOptions opt;
    opt.max_batch = 4;
    const Service svc(gen, opt);
    const int N = world.n_attributes();

    const json schema = svc.schema();
    c.expect(schema.at("attributes") == json(attribute_names(N)), "schema attribute names");
    c.expect(schema.at("prompt_classes").size() == static_cast<size_t>(world.n_prompt_classes()),
             "schema prompt class count");
    const json health = svc.healthz();
    c.expect(health.at("status") == "ok" && health.at("model_step") == ck.step, "healthz");

    const json base = {{"prompt_class", 0}, {"sliders", std::vector<double>(static_cast<size_t>(N), 0.5)}, {"seed", 7}};
    auto rejected_with = [&](json body, const std::string& field, bool batch = false) {
        try {
            batch ? svc.handle_batch(body) : svc.handle_generate(body);
            return false;
        } catch (const service_error& e) {
            return e.status() == 400 && e.field() == field;
        }
    };
    {
        json b = base;
        b["sliders"][1] = 1.2;
        c.expect(rejected_with(b, "sliders[1]"), "slider 1.2 not rejected with its field");
    }
    {
        json b = base;
        b["sliders"] = std::vector<double>(static_cast<size_t>(N - 1), 0.5);
        c.expect(rejected_with(b, "sliders"), "short slider array");
    }
    {
        json b = base;
        b["prompt_class"] = world.n_prompt_classes();
        c.expect(rejected_with(b, "prompt_class"), "prompt_class out of range");
    }
    {
        json b = base;
        b["seed"] = -1;
        c.expect(rejected_with(b, "seed"), "negative seed");
    }
    {
        json b = base;
        b["steps"] = gen.schedule().T + 1;
        c.expect(rejected_with(b, "steps"), "steps above T");
    }
    {
        json b = base;
        b["bogus"] = 1;
        c.expect(rejected_with(b, "bogus"), "unknown field");
    }
    c.expect(rejected_with({{"requests", json::array({base, base, base, base, base})}}, "requests", true),
             "max_batch + 1 accepted");

    const std::string first = svc.handle_generate(base).dump();
    c.expect(svc.handle_generate(base).dump() == first, "repeat response not byte-identical");
    const json resp = json::parse(first);
    for (const auto& m : resp.at("measured_attributes"))
        c.expect(m.get<double>() >= 0.0 && m.get<double>() <= 1.0, "measured attribute outside [0,1]");
    const std::string svg = resp.at("render").get<std::string>();
    c.expect(svg.find("<svg ") != std::string::npos && svg.find("</svg>") != std::string::npos,
             "render is not an SVG document");
    c.expect(resp.at("latent").size() == static_cast<size_t>(world.latent_dim()), "latent length");

    std::vector<json> reqs;
    for (int k = 0; k < 3; ++k) {
        json b = base;
        b["seed"] = 100 + k;
        b["sliders"][0] = 0.25 * k;
        reqs.push_back(b);
    }
    const json batch = svc.handle_batch({{"requests", reqs}});
    for (int k = 0; k < 3; ++k)
        c.expect(batch["responses"][k] == svc.handle_generate(reqs[static_cast<size_t>(k)]), "batch != singles");
    c.expect(svc.handle_batch({{"requests", json::array()}})["responses"].empty(), "empty batch");

    std::vector<double> lat;
    for (int k = 0; k < 10; ++k) {
        json b = base;
        b["seed"] = 1000 + k;
        Clock t;
        svc.handle_generate(b);
        lat.push_back(t.seconds());
    }
    std::sort(lat.begin(), lat.end());
    const double median_ms = 1000 * lat[lat.size() / 2], max_ms = 1000 * lat.back();
    c.expect(max_ms <= 200.0, fmt("single generate took %.1f ms", max_ms));

    // service-level continuity, informational
    int monotone = 0;
    for (int a = 0; a < N; ++a) {
        double prev = -1.0;
        bool up = true;
        for (double v : SweepProtocol::even_grid(5)) {
            json b = base;
            b["sliders"][a] = v;
            const double m = svc.handle_generate(b)["measured_attributes"][a].get<double>();
            up = up && m > prev;
            prev = m;
        }
        monotone += up;
    }
    return {c.ok, c.summary(fmt("schema, validation and determinism hold; generate latency median %.1f ms, max %.1f ms",
                                median_ms, max_ms)) +
                      fmt("; %d/%d sliders monotone at seed 7 (%.1f s)", monotone, N, clock.seconds())};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work = COMPSLIDER_ACCEPTANCE_WORK, config = std::string(COMPSLIDER_SOURCE_DIR) + "/configs/desk.ini";
    std::string only;
    bool fresh = false;
    app.add_option("--work", work, "Work directory for cached training runs");
    app.add_option("--config", config, "Desk run config");
    app.add_option("--only", only, "Comma-separated criteria to run, e.g. P1,P4");
    app.add_flag("--fresh", fresh, "Ignore cached runs");
    CLI11_PARSE(app, argc, argv);

#ifdef COMPSLIDER_OPENBLAS
    openblas_set_num_threads(1);
#endif

    std::set<std::string> selected;
    for (const auto& s : detail::split(only, ','))
        if (!detail::trim(s).empty())
            selected.insert(detail::trim(s));
    auto want = [&](const std::string& id) { return selected.empty() || selected.count(id) > 0; };

    int failed = 0;
    auto report = [&](const std::string& id, const std::string& title, const std::function<Outcome()>& fn) {
        if (!want(id))
            return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << title << ": " << o.detail << std::endl;
    };

    report("P1", "embedding exactness", p1_embedding);
    report("P2", "bucketizer", p2_buckets);
    report("P3", "sampler exactness", p3_sampler);
    report("P4", "gradient correctness", p4_gradients);

    const std::set<std::string> trained = {"P5", "P6", "P7", "P9", "P10", "P11"};
    bool need_runs = false;
    for (const auto& id : trained)
        need_runs = need_runs || want(id);

    if (need_runs) {
        std::unique_ptr<Workspace> ws;
        Run full, diff, clss, tau05;
        std::string setup_error;
        try {
            ws = std::make_unique<Workspace>(work, load_run_config(config), !fresh);
            const RunConfig& b = ws->base();
            full = ws->ensure("full", variant(b, true, true, b.train.structure_threshold));
            if (want("P6")) {
                diff = ws->ensure("diff", variant(b, false, false, b.train.structure_threshold));
                clss = ws->ensure("diff_clss", variant(b, true, false, b.train.structure_threshold));
            }
            if (want("P7"))
                tau05 = ws->ensure("full_tau0.5", variant(b, true, true, 0.5));
        } catch (const std::exception& e) {
            setup_error = std::string("training setup failed: ") + e.what();
        }
        auto guarded = [&](const std::function<Outcome()>& fn) {
            return [&, fn] { return setup_error.empty() ? fn() : Outcome{false, setup_error}; };
        };
        report("P5", "training convergence", guarded([&] { return p5_convergence(*ws, full); }));
        report("P6", "loss ablation direction", guarded([&] { return p6_ablation(diff, clss, full); }));
        report("P7", "threshold direction", guarded([&] { return p7_threshold(full, tau05); }));
        report("P8", "metric oracle suite", p8_metric_oracles);
        report("P9", "classifier above chance", guarded([&] { return p9_classifier(*ws, full); }));
        report("P10", "determinism", guarded([&] { return p10_determinism(*ws, full); }));
        report("P11", "service contract", guarded([&] { return p11_service(*ws, full); }));
    } else {
        report("P8", "metric oracle suite", p8_metric_oracles);
    }
    return failed == 0 ? 0 : 1;
}
