// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run configuration: INI-style sections of `key = value` lines. `#` starts
// a comment. Unknown sections or keys, malformed values and duplicate keys
// are errors that carry the line number. See docs/config.md for the schema.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/checkpoint.hpp"
#include "compslider/common.hpp"
#include "compslider/denoiser.hpp"
#include "compslider/metrics.hpp"
#include "compslider/training.hpp"
#include "compslider/world.hpp"

namespace compslider {

/// Config parse error; `line()` is 1-based, 0 when not tied to a line.
class config_error : public validation_error {
public:
    config_error(const std::string& source, int line, const std::string& what, std::string field = {})
        : validation_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what,
                           std::move(field)),
          m_line(line) {}
    int line() const noexcept { return m_line; }

private:
    int m_line;
};

struct DataConfig {
    int count = 50000;
    double noise_sigma = 0.01;
    uint64_t seed = 3;
};

struct RunConfig {
    WorldSpec world = default_world_spec();
    DenoiserConfig model;
    DiffusionConfig diffusion;
    TrainConfig train;
    DataConfig data;
    SweepProtocol eval;
    MetricOptions metrics;

    /// Copies world dimensions into the model and checks cross-section consistency.
    void finalize() {
        model.n_sliders = world.n_attributes;
        model.latent_dim = world.latent_dim;
        model.text_len = world.text_len;
        world.token_dim = model.dim;
        model.n_buckets = train.buckets;
        if (world.attr_correlation.rows() != world.n_attributes)
            world.attr_correlation = default_correlation(world.n_attributes);
        validate(world);
        model.validate();
        train.validate();
        require(data.count >= 1, "data count must be >= 1", "count");
        require(data.noise_sigma >= 0, "data noise_sigma must be >= 0", "noise_sigma");
        eval.validate();
        metrics.validate();
        require(diffusion.T >= 1, "diffusion T must be >= 1", "T");
        require(eval.steps <= diffusion.T, "eval steps exceed diffusion T", "steps");
    }
};

inline nlohmann::json to_json(const DataConfig& d) {
    return {{"count", d.count}, {"noise_sigma", d.noise_sigma}, {"seed", d.seed}};
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"world", to_json(c.world)},         {"model", to_json(c.model)},   {"diffusion", to_json(c.diffusion)},
            {"train", to_json(c.train)},         {"data", to_json(c.data)},     {"eval", to_json(c.eval)},
            {"metrics", to_json(c.metrics)}};
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    if (ec != std::errc() || p != end)
        return false;
    if constexpr (std::is_floating_point_v<T>)
        return std::isfinite(out);
    return true;
}

inline bool parse_bool(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        out.push_back(trim(cur));
    return out;
}

} // namespace detail

/// Parses `text`; `source` names the input in diagnostics.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
    RunConfig cfg;
    // correlation entries are applied after the world size is known
    std::vector<std::tuple<int, int, double, int>> corr_entries;
    bool corr_given = false;

    using Setter = std::function<bool(const std::string&)>;
    auto integer = [](int& dst) -> Setter { return [&dst](const std::string& v) { return detail::parse_number(v, dst); }; };
    auto u64 = [](uint64_t& dst) -> Setter {
        return [&dst](const std::string& v) { return detail::parse_number(v, dst); };
    };
    auto real = [](double& dst) -> Setter {
        return [&dst](const std::string& v) { return detail::parse_number(v, dst); };
    };
    auto boolean = [](bool& dst) -> Setter { return [&dst](const std::string& v) { return detail::parse_bool(v, dst); }; };

    std::map<std::string, std::map<std::string, Setter>> keys;
    auto& w = keys["world"];
    w["n_attributes"] = integer(cfg.world.n_attributes);
    w["latent_dim"] = integer(cfg.world.latent_dim);
    w["n_prompt_classes"] = integer(cfg.world.n_prompt_classes);
    w["identity_dim"] = integer(cfg.world.identity_dim);
    w["text_len"] = integer(cfg.world.text_len);
    w["obs_noise_sigma"] = real(cfg.world.obs_noise_sigma);
    w["world_seed"] = u64(cfg.world.world_seed);
    w["smooth_perturbation"] = boolean(cfg.world.smooth_perturbation);

    auto& m = keys["model"];
    m["blocks"] = integer(cfg.model.blocks);
    m["dim"] = integer(cfg.model.dim);
    m["heads"] = integer(cfg.model.heads);
    m["mlp_ratio"] = integer(cfg.model.mlp_ratio);
    m["classifier_hidden"] = integer(cfg.model.classifier_hidden);
    m["frequency_base"] = real(cfg.model.frequency_base);

    auto& d = keys["diffusion"];
    d["T"] = integer(cfg.diffusion.T);
    d["schedule"] = [&](const std::string& v) {
        if (v != "cosine" && v != "linear")
            return false;
        cfg.diffusion.kind = schedule_kind_from_string(v);
        return true;
    };
    d["literal_reverse"] = boolean(cfg.diffusion.literal_reverse);
    d["deterministic_final_step"] = boolean(cfg.diffusion.deterministic_final_step);

    auto& t = keys["train"];
    t["batch_size"] = integer(cfg.train.batch_size);
    t["total_steps"] = integer(cfg.train.total_steps);
    t["lr_peak"] = real(cfg.train.lr_peak);
    t["lr_floor"] = real(cfg.train.lr_floor);
    t["warmup_steps"] = integer(cfg.train.warmup_steps);
    t["buckets"] = integer(cfg.train.buckets);
    t["structure_threshold"] = real(cfg.train.structure_threshold);
    t["use_disentanglement"] = boolean(cfg.train.use_disentanglement);
    t["use_structure"] = boolean(cfg.train.use_structure);
    t["weight_diffusion"] = real(cfg.train.weight_diffusion);
    t["weight_disentanglement"] = real(cfg.train.weight_disentanglement);
    t["weight_structure"] = real(cfg.train.weight_structure);
    t["weight_decay"] = real(cfg.train.weight_decay);
    t["beta1"] = real(cfg.train.beta1);
    t["beta2"] = real(cfg.train.beta2);
    t["adam_eps"] = real(cfg.train.adam_eps);
    t["holdout_fraction"] = real(cfg.train.holdout_fraction);
    t["seed"] = u64(cfg.train.seed);
    t["log_interval"] = integer(cfg.train.log_interval);
    t["checkpoint_interval"] = integer(cfg.train.checkpoint_interval);

    auto& da = keys["data"];
    da["count"] = integer(cfg.data.count);
    da["noise_sigma"] = real(cfg.data.noise_sigma);
    da["seed"] = u64(cfg.data.seed);

    auto& e = keys["eval"];
    e["n_prompts"] = integer(cfg.eval.n_prompts);
    e["values"] = [&](const std::string& v) {
        std::vector<double> vals;
        for (const auto& part : detail::split(v, ',')) {
            double x;
            if (!detail::parse_number(part, x))
                return false;
            vals.push_back(x);
        }
        cfg.eval.values = std::move(vals);
        return true;
    };
    e["grid"] = [&](const std::string& v) {
        int n;
        if (!detail::parse_number(v, n) || n < 2)
            return false;
        cfg.eval.values = SweepProtocol::even_grid(n);
        return true;
    };
    e["baseline"] = real(cfg.eval.baseline);
    e["seed"] = u64(cfg.eval.seed);
    e["steps"] = integer(cfg.eval.steps);
    e["delta"] = real(cfg.metrics.delta);
    e["epsilon"] = real(cfg.metrics.epsilon);
    e["adjacent_only"] = boolean(cfg.metrics.adjacent_only);

    std::istringstream is(text);
    std::string raw, section;
    int lineno = 0;
    std::set<std::string> seen;
    while (std::getline(is, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error(source, lineno, "unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (!keys.count(section))
                throw config_error(source, lineno, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(source, lineno, "expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw config_error(source, lineno, "key '" + key + "' outside of a section", key);
        if (key.empty())
            throw config_error(source, lineno, "empty key");
        const std::string qualified = section + "." + key;
        if (!seen.insert(qualified).second)
            throw config_error(source, lineno, "duplicate key " + qualified, key);
        if (section == "world" && key == "correlation") {
            // correlation = i:j=r, k:l=s  (off-diagonal entries; unspecified entries are 0)
            corr_given = true;
            if (value.empty())
                continue;
            for (const auto& entry : detail::split(value, ',')) {
                const auto c = entry.find(':'), q = entry.find('=');
                int i, j;
                double r;
                if (c == std::string::npos || q == std::string::npos || q < c ||
                    !detail::parse_number(detail::trim(entry.substr(0, c)), i) ||
                    !detail::parse_number(detail::trim(entry.substr(c + 1, q - c - 1)), j) ||
                    !detail::parse_number(detail::trim(entry.substr(q + 1)), r))
                    throw config_error(source, lineno, "bad correlation entry '" + entry + "' (want i:j=r)", key);
                corr_entries.emplace_back(i, j, r, lineno);
            }
            continue;
        }
        auto it = keys[section].find(key);
        if (it == keys[section].end())
            throw config_error(source, lineno, "unknown key '" + key + "' in [" + section + "]", key);
        if (!it->second(value))
            throw config_error(source, lineno, "invalid value '" + value + "' for " + qualified, key);
    }

    if (corr_given) {
        const int n = cfg.world.n_attributes;
        require(n >= 1, "n_attributes must be >= 1", "n_attributes");
        Eigen::MatrixXd c = Eigen::MatrixXd::Identity(n, n);
        for (const auto& [i, j, r, ln] : corr_entries) {
            if (i < 0 || j < 0 || i >= n || j >= n || i == j)
                throw config_error(source, ln, "correlation index out of range", "correlation");
            if (r <= -1.0 || r >= 1.0)
                throw config_error(source, ln, "correlation must lie in (-1, 1)", "correlation");
            c(i, j) = c(j, i) = r;
        }
        cfg.world.attr_correlation = nearest_correlation(c);
    } else {
        cfg.world.attr_correlation = default_correlation(cfg.world.n_attributes);
    }
    try {
        cfg.finalize();
    } catch (const config_error&) {
        throw;
    } catch (const validation_error& ex) {
        throw config_error(source, 0, ex.what(), ex.field());
    }
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw io_error("cannot open config " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str(), path.string());
}

} // namespace compslider
