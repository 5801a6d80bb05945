// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Sweep evaluation. A sweep line fixes a prompt and a target attribute,
// moves the target across the value grid and holds every other attribute
// at the baseline. All cells of one prompt share one sampler seed. The
// world read-outs score each generated latent.
//
//   continuity    % of ordered value pairs whose target score strictly increases
//   scope         mean over lines of max(0, score(v_max) - score(v_min)), x100
//   consistency   % of lines whose identity read-outs all lie within a
//                 max-norm ball of diameter delta
//   entanglement  % of lines where some non-target score range exceeds epsilon

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/common.hpp"
#include "compslider/generate.hpp"
#include "compslider/rng.hpp"
#include "compslider/world.hpp"

namespace compslider {

struct SweepProtocol {
    int n_prompts = 50;
    std::vector<double> values{0.0, 0.25, 0.5, 0.75, 1.0};
    double baseline = 0.5;
    uint64_t seed = 1;
    int steps = 0; // sampler steps, 0 = full schedule

    void validate() const {
        require(n_prompts >= 1, "n_prompts must be >= 1", "n_prompts");
        require(values.size() >= 2, "need at least two slider values", "values");
        for (size_t i = 0; i < values.size(); ++i) {
            require(values[i] >= 0.0 && values[i] <= 1.0, "slider values must lie in [0,1]", "values");
            require(i == 0 || values[i] > values[i - 1], "slider values must be strictly ascending", "values");
        }
        require(baseline >= 0.0 && baseline <= 1.0, "baseline must lie in [0,1]", "baseline");
        require(steps >= 0, "steps must be >= 0", "steps");
    }

    static std::vector<double> even_grid(int count) {
        require(count >= 2, "grid needs at least two values", "values");
        std::vector<double> v(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i)
            v[static_cast<size_t>(i)] = static_cast<double>(i) / (count - 1);
        return v;
    }

    int prompt_class(int prompt, int n_classes) const { return prompt % n_classes; }
    uint64_t prompt_seed(int prompt) const { return derive_seed(seed, {static_cast<uint64_t>(prompt)}); }
};

inline nlohmann::json to_json(const SweepProtocol& p) {
    return {{"n_prompts", p.n_prompts}, {"values", p.values}, {"baseline", p.baseline}, {"seed", p.seed},
            {"steps", p.steps}};
}

inline SweepProtocol sweep_protocol_from_json(const nlohmann::json& j) {
    SweepProtocol p;
    p.n_prompts = j.at("n_prompts").get<int>();
    p.values = j.at("values").get<std::vector<double>>();
    p.baseline = j.at("baseline").get<double>();
    p.seed = j.at("seed").get<uint64_t>();
    p.steps = j.value("steps", 0);
    return p;
}

struct SweepCell {
    Eigen::VectorXd sliders;
    Eigen::VectorXd latent;
    Eigen::VectorXd scores;   // read_attributes
    Eigen::VectorXd identity; // read_identity
};

struct SweepLine {
    int prompt = 0;
    int prompt_class = 0;
    int attribute = 0;
    uint64_t seed = 0;
    std::vector<SweepCell> cells; // one per protocol value, ascending
};

struct SweepResults {
    SweepProtocol protocol;
    int n_attributes = 0;
    int identity_dim = 0;
    std::vector<SweepLine> lines;

    size_t cell_count() const {
        size_t n = 0;
        for (const auto& l : lines)
            n += l.cells.size();
        return n;
    }
};

/// Generator interface: one latent row per slider vector, all sharing `seed`.
using SweepGenerator =
    std::function<Eigen::MatrixXd(int prompt_class, const std::vector<Eigen::VectorXd>& sliders, uint64_t seed)>;

inline SweepResults run_sweep(const SweepGenerator& gen, const World& world, const SweepProtocol& protocol) {
    protocol.validate();
    const int N = world.n_attributes();
    const auto V = static_cast<int>(protocol.values.size());
    SweepResults res;
    res.protocol = protocol;
    res.n_attributes = N;
    res.identity_dim = world.identity_dim();
    for (int p = 0; p < protocol.n_prompts; ++p) {
        const int pc = protocol.prompt_class(p, world.n_prompt_classes());
        const uint64_t seed = protocol.prompt_seed(p);
        std::vector<Eigen::VectorXd> sliders;
        sliders.reserve(static_cast<size_t>(N * V));
        for (int a = 0; a < N; ++a)
            for (double v : protocol.values) {
                Eigen::VectorXd s = Eigen::VectorXd::Constant(N, protocol.baseline);
                s(a) = v;
                sliders.push_back(std::move(s));
            }
        Eigen::MatrixXd latents = gen(pc, sliders, seed);
        require(latents.rows() == N * V && latents.cols() == world.latent_dim(),
                "sweep generator returned the wrong shape");
        for (int a = 0; a < N; ++a) {
            SweepLine line;
            line.prompt = p;
            line.prompt_class = pc;
            line.attribute = a;
            line.seed = seed;
            for (int k = 0; k < V; ++k) {
                const int row = a * V + k;
                SweepCell cell;
                cell.sliders = sliders[static_cast<size_t>(row)];
                cell.latent = latents.row(row).transpose();
                const ConditionLatent c{cell.latent};
                cell.scores = read_attributes(world, c, pc).values;
                cell.identity = read_identity(world, c, pc).values;
                line.cells.push_back(std::move(cell));
            }
            res.lines.push_back(std::move(line));
        }
    }
    return res;
}

/// Sweep generator backed by a trained checkpoint.
inline SweepGenerator model_sweep_generator(const Generator& g, int steps = 0) {
    return [&g, steps](int pc, const std::vector<Eigen::VectorXd>& sliders, uint64_t seed) {
        std::vector<uint64_t> seeds(sliders.size(), seed);
        return g.generate(pc, sliders, seeds, steps);
    };
}

inline SweepResults run_sweep(const Generator& g, const SweepProtocol& protocol) {
    return run_sweep(model_sweep_generator(g, protocol.steps), g.world(), protocol);
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricOptions {
    double delta = 0.1;   // identity max-norm tolerance
    double epsilon = 0.1; // non-target score tolerance
    bool adjacent_only = false;

    void validate() const {
        require(delta > 0, "delta must be > 0", "delta");
        require(epsilon > 0, "epsilon must be > 0", "epsilon");
    }
};

inline nlohmann::json to_json(const MetricOptions& o) {
    return {{"delta", o.delta}, {"epsilon", o.epsilon}, {"adjacent_only", o.adjacent_only}};
}

inline MetricOptions metric_options_from_json(const nlohmann::json& j) {
    MetricOptions o;
    o.delta = j.at("delta").get<double>();
    o.epsilon = j.at("epsilon").get<double>();
    o.adjacent_only = j.at("adjacent_only").get<bool>();
    return o;
}

namespace detail {

struct LineStats {
    int64_t ordered_pairs = 0;
    int64_t correct_pairs = 0;
    double scope = 0.0; // fraction, clamped at 0
    bool consistent = true;
    bool entangled = false;
    double abs_error = 0.0; // summed over cells and attributes
    int64_t error_terms = 0;
};

inline LineStats line_stats(const SweepLine& line, const MetricOptions& opt) {
    LineStats s;
    const auto V = line.cells.size();
    const int a = line.attribute;
    for (size_t j = 0; j < V; ++j)
        for (size_t k = j + 1; k < V; ++k) {
            if (opt.adjacent_only && k != j + 1)
                continue;
            ++s.ordered_pairs;
            s.correct_pairs += line.cells[k].scores(a) > line.cells[j].scores(a);
        }
    s.scope = std::max(0.0, line.cells.back().scores(a) - line.cells.front().scores(a));

    const auto K = V ? line.cells.front().identity.size() : 0;
    for (Eigen::Index c = 0; c < K && s.consistent; ++c) {
        double lo = line.cells.front().identity(c), hi = lo;
        for (const auto& cell : line.cells) {
            lo = std::min(lo, cell.identity(c));
            hi = std::max(hi, cell.identity(c));
        }
        s.consistent = hi - lo <= opt.delta;
    }

    const auto N = V ? line.cells.front().scores.size() : 0;
    for (Eigen::Index i = 0; i < N && !s.entangled; ++i) {
        if (i == a)
            continue;
        double lo = line.cells.front().scores(i), hi = lo;
        for (const auto& cell : line.cells) {
            lo = std::min(lo, cell.scores(i));
            hi = std::max(hi, cell.scores(i));
        }
        s.entangled = hi - lo > opt.epsilon;
    }

    for (const auto& cell : line.cells) {
        s.abs_error += (cell.scores - cell.sliders).cwiseAbs().sum();
        s.error_terms += cell.scores.size();
    }
    return s;
}

inline double percent(int64_t num, int64_t den) {
    return den > 0 ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

} // namespace detail

inline double continuity(const SweepResults& r, bool adjacent_only = false) {
    MetricOptions o;
    o.adjacent_only = adjacent_only;
    int64_t num = 0, den = 0;
    for (const auto& l : r.lines) {
        auto s = detail::line_stats(l, o);
        num += s.correct_pairs;
        den += s.ordered_pairs;
    }
    return detail::percent(num, den);
}

inline double scope(const SweepResults& r) {
    if (r.lines.empty())
        return 0.0;
    double sum = 0.0;
    for (const auto& l : r.lines)
        sum += detail::line_stats(l, {}).scope;
    return 100.0 * sum / static_cast<double>(r.lines.size());
}

inline double consistency(const SweepResults& r, double delta = 0.1) {
    MetricOptions o;
    o.delta = delta;
    o.validate();
    int64_t ok = 0;
    for (const auto& l : r.lines)
        ok += detail::line_stats(l, o).consistent;
    return detail::percent(ok, static_cast<int64_t>(r.lines.size()));
}

inline double entanglement(const SweepResults& r, double epsilon = 0.1) {
    MetricOptions o;
    o.epsilon = epsilon;
    o.validate();
    int64_t bad = 0;
    for (const auto& l : r.lines)
        bad += detail::line_stats(l, o).entangled;
    return detail::percent(bad, static_cast<int64_t>(r.lines.size()));
}

/// Mean |score - requested slider| over every cell and attribute.
inline double mean_abs_error(const SweepResults& r) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& l : r.lines) {
        auto s = detail::line_stats(l, {});
        sum += s.abs_error;
        n += s.error_terms;
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Report

struct MetricSummary {
    double continuity = 0.0;
    double scope = 0.0;
    double consistency = 0.0;
    double entanglement = 0.0;
    double mean_abs_error = 0.0;
    int64_t lines = 0;
    int64_t pairs = 0;

    bool operator==(const MetricSummary&) const = default;
};

struct MetricsReport {
    static constexpr const char* schema_version = "compslider.report/v1";

    MetricSummary overall;
    std::vector<std::string> attribute_names;
    std::vector<MetricSummary> per_attribute;
    int64_t cells = 0;
    SweepProtocol protocol;
    MetricOptions options;

    bool operator==(const MetricsReport& o) const {
        return overall == o.overall && attribute_names == o.attribute_names && per_attribute == o.per_attribute &&
               cells == o.cells && to_json(protocol) == to_json(o.protocol) && to_json(options) == to_json(o.options);
    }
};

inline MetricsReport report(const SweepResults& r, const MetricOptions& opt,
                            const std::vector<std::string>& names = {}) {
    opt.validate();
    const int N = r.n_attributes;
    MetricsReport rep;
    rep.protocol = r.protocol;
    rep.options = opt;
    rep.attribute_names = names.empty() ? attribute_names(N) : names;
    require(static_cast<int>(rep.attribute_names.size()) == N, "report: attribute name count mismatch");
    rep.cells = static_cast<int64_t>(r.cell_count());

    struct Acc {
        int64_t lines = 0, pairs = 0, correct = 0, consistent = 0, entangled = 0, err_terms = 0;
        double scope = 0.0, err = 0.0;
        void add(const detail::LineStats& s) {
            ++lines;
            pairs += s.ordered_pairs;
            correct += s.correct_pairs;
            consistent += s.consistent;
            entangled += s.entangled;
            scope += s.scope;
            err += s.abs_error;
            err_terms += s.error_terms;
        }
        MetricSummary summary() const {
            MetricSummary m;
            m.lines = lines;
            m.pairs = pairs;
            m.continuity = detail::percent(correct, pairs);
            m.scope = lines ? 100.0 * scope / static_cast<double>(lines) : 0.0;
            m.consistency = detail::percent(consistent, lines);
            m.entanglement = detail::percent(entangled, lines);
            m.mean_abs_error = err_terms ? err / static_cast<double>(err_terms) : 0.0;
            return m;
        }
    };
    Acc all;
    std::vector<Acc> per(static_cast<size_t>(N));
    for (const auto& l : r.lines) {
        auto s = detail::line_stats(l, opt);
        all.add(s);
        per[static_cast<size_t>(l.attribute)].add(s);
    }
    rep.overall = all.summary();
    for (const auto& a : per)
        rep.per_attribute.push_back(a.summary());
    return rep;
}

inline nlohmann::json to_json(const MetricSummary& m) {
    return {{"continuity", m.continuity},   {"scope", m.scope}, {"consistency", m.consistency},
            {"entanglement", m.entanglement}, {"mean_abs_error", m.mean_abs_error},
            {"lines", m.lines},             {"pairs", m.pairs}};
}

inline MetricSummary metric_summary_from_json(const nlohmann::json& j) {
    MetricSummary m;
    m.continuity = j.at("continuity").get<double>();
    m.scope = j.at("scope").get<double>();
    m.consistency = j.at("consistency").get<double>();
    m.entanglement = j.at("entanglement").get<double>();
    m.mean_abs_error = j.at("mean_abs_error").get<double>();
    m.lines = j.at("lines").get<int64_t>();
    m.pairs = j.at("pairs").get<int64_t>();
    return m;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (size_t i = 0; i < r.per_attribute.size(); ++i) {
        auto e = to_json(r.per_attribute[i]);
        e["attribute"] = r.attribute_names[i];
        per.push_back(std::move(e));
    }
    return {{"schema_version", MetricsReport::schema_version},
            {"overall", to_json(r.overall)},
            {"per_attribute", std::move(per)},
            {"cells", r.cells},
            {"protocol", to_json(r.protocol)},
            {"options", to_json(r.options)}};
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<std::string>() != MetricsReport::schema_version)
        throw validation_error("unsupported report schema " + j.at("schema_version").get<std::string>(),
                               "schema_version");
    MetricsReport r;
    r.overall = metric_summary_from_json(j.at("overall"));
    for (const auto& e : j.at("per_attribute")) {
        r.attribute_names.push_back(e.at("attribute").get<std::string>());
        r.per_attribute.push_back(metric_summary_from_json(e));
    }
    r.cells = j.at("cells").get<int64_t>();
    r.protocol = sweep_protocol_from_json(j.at("protocol"));
    r.options = metric_options_from_json(j.at("options"));
    return r;
}

/// Plain-text table, one row per labelled report.
inline std::string format_table(const std::vector<std::pair<std::string, MetricSummary>>& rows) {
    size_t w = 6;
    for (const auto& [label, _] : rows)
        w = std::max(w, label.size());
    auto pad = [](std::string s, size_t n) {
        s.resize(std::max(n, s.size()), ' ');
        return s;
    };
    std::string out = pad("Config", w) + "  Cont.%  Cons.%  Scope%  Entang.%\n";
    out += std::string(w, '-') + "  ------  ------  ------  --------\n";
    char buf[96];
    for (const auto& [label, m] : rows) {
        std::snprintf(buf, sizeof buf, "  %6.2f  %6.2f  %6.2f  %8.2f\n", m.continuity, m.consistency, m.scope,
                      m.entanglement);
        out += pad(label, w) + buf;
    }
    return out;
}

inline std::string format_table(const MetricsReport& r) {
    std::vector<std::pair<std::string, MetricSummary>> rows{{"overall", r.overall}};
    for (size_t i = 0; i < r.per_attribute.size(); ++i)
        rows.emplace_back(r.attribute_names[i], r.per_attribute[i]);
    return format_table(rows);
}

} // namespace compslider
