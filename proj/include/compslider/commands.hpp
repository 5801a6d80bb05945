// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Pipeline commands behind the compslider CLI. Each returns a manifest
// document: the inputs it ran with, the hashes of what it read and wrote,
// and wall-clock timings.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/checkpoint.hpp"
#include "compslider/config.hpp"
#include "compslider/generate.hpp"
#include "compslider/metrics.hpp"
#include "compslider/service.hpp"
#include "compslider/training.hpp"
#include "compslider/world.hpp"

namespace compslider {

inline constexpr const char* manifest_schema = "compslider.manifest/v1";

namespace detail {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - m_start).count();
    }

private:
    std::chrono::steady_clock::time_point m_start = std::chrono::steady_clock::now();
};

inline nlohmann::json manifest_base(const std::string& command) {
    return {{"schema", manifest_schema}, {"command", command}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw io_error("cannot open " + path.string() + " for writing");
    os << text;
    if (!os)
        throw io_error("write failed for " + path.string());
}

} // namespace detail

inline void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& path) {
    detail::write_text(path, manifest.dump(2) + "\n");
}

/// Loads a world file and rebuilds the world it describes.
inline World load_world(const std::filesystem::path& path) { return build_world(load_world_spec(path)); }

/// Replaces the config's world section with the given spec and re-derives dependent fields.
inline RunConfig with_world(RunConfig cfg, const WorldSpec& spec) {
    const int dim = cfg.model.dim;
    cfg.world = spec;
    require(spec.token_dim == dim,
            "world token_dim " + std::to_string(spec.token_dim) + " differs from model dim " + std::to_string(dim),
            "token_dim");
    cfg.finalize();
    return cfg;
}

inline nlohmann::json cmd_world_init(const RunConfig& cfg, const std::filesystem::path& out) {
    detail::Stopwatch sw;
    validate(cfg.world);
    if (out.has_parent_path())
        std::filesystem::create_directories(out.parent_path());
    save_world(cfg.world, out);
    auto m = detail::manifest_base("world-init");
    m["config"] = to_json(cfg);
    m["world_path"] = out.string();
    m["spec_hash"] = hex64(spec_hash(cfg.world));
    m["timings"] = {{"total_seconds", sw.seconds()}};
    return m;
}

inline nlohmann::json cmd_data_gen(const std::filesystem::path& world_path, const DataConfig& data,
                                   const std::filesystem::path& out) {
    detail::Stopwatch sw;
    require(data.count >= 1, "count must be >= 1", "count");
    require(data.noise_sigma >= 0, "noise_sigma must be >= 0", "noise_sigma");
    const World world = load_world(world_path);
    if (out.has_parent_path())
        std::filesystem::create_directories(out.parent_path());
    const uint64_t h = generate_dataset(world, data.count, data.noise_sigma, data.seed, out);
    auto m = detail::manifest_base("data-gen");
    m["world_path"] = world_path.string();
    m["spec_hash"] = hex64(world.hash);
    m["data"] = to_json(data);
    m["dataset_path"] = out.string();
    m["dataset_hash"] = hex64(h);
    m["timings"] = {{"total_seconds", sw.seconds()}};
    return m;
}

struct TrainPaths {
    std::filesystem::path world;
    std::filesystem::path data;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_log; // empty: <checkpoint>.metrics.ndjson
};

inline nlohmann::json cmd_train(const RunConfig& base, const TrainPaths& paths, std::ostream* progress = nullptr) {
    detail::Stopwatch sw;
    const World world = load_world(paths.world);
    const RunConfig cfg = with_world(base, world.spec);
    const uint64_t data_hash = file_hash(paths.data);
    const Dataset ds = read_dataset(paths.data);
    require(ds.spec_hash == world.hash,
            "dataset " + paths.data.string() + " was generated for world " + hex64(ds.spec_hash) + ", not " +
                hex64(world.hash),
            "spec_hash");
    const double load_s = sw.seconds();

    const auto log_path =
        paths.metrics_log.empty() ? std::filesystem::path(paths.checkpoint.string() + ".metrics.ndjson")
                                  : paths.metrics_log;
    if (paths.checkpoint.has_parent_path())
        std::filesystem::create_directories(paths.checkpoint.parent_path());
    std::ofstream log(log_path, std::ios::trunc);
    if (!log)
        throw io_error("cannot open " + log_path.string() + " for writing");

    std::vector<std::string> periodic;
    TrainHooks hooks;
    hooks.metrics_log = &log;
    hooks.on_log = [progress, &cfg](int step, const LossBreakdown& l) {
        if (progress)
            *progress << "step " << step << "/" << cfg.train.total_steps << " diffusion=" << l.diffusion
                      << " disentanglement=" << l.disentanglement << " structure=" << l.structure
                      << " gate_rate=" << l.gate_rate << std::endl;
    };
    hooks.on_checkpoint = [&](const Checkpoint& ck) {
        const std::string p = paths.checkpoint.string() + ".step" + std::to_string(ck.step);
        save_checkpoint(ck, p);
        periodic.push_back(p);
    };
    TrainResult res = train(world, ds, cfg.model, cfg.diffusion, cfg.train, hooks);
    res.checkpoint.meta["dataset_hash"] = hex64(data_hash);
    const uint64_t ck_hash = save_checkpoint(res.checkpoint, paths.checkpoint);

    auto m = detail::manifest_base("train");
    m["config"] = to_json(cfg);
    m["world_path"] = paths.world.string();
    m["spec_hash"] = hex64(world.hash);
    m["dataset_path"] = paths.data.string();
    m["dataset_hash"] = hex64(data_hash);
    m["checkpoint_path"] = paths.checkpoint.string();
    m["checkpoint_hash"] = hex64(ck_hash);
    m["periodic_checkpoints"] = periodic;
    m["metrics_log_path"] = log_path.string();
    m["parameter_count"] = res.checkpoint.params.parameter_count();
    m["final_loss"] = to_json(res.last);
    m["timings"] = {{"load_seconds", load_s}, {"train_seconds", res.seconds}, {"total_seconds", sw.seconds()}};
    return m;
}

struct EvalPaths {
    std::filesystem::path checkpoint;
    std::filesystem::path world;
    std::filesystem::path report;
    std::filesystem::path table; // empty: <report>.txt
};

/// Report document: the metrics report plus the hashes of its inputs.
inline nlohmann::json eval_document(const MetricsReport& rep, uint64_t checkpoint_hash, uint64_t spec_hash_value) {
    nlohmann::json doc = to_json(rep);
    doc["checkpoint_hash"] = hex64(checkpoint_hash);
    doc["spec_hash"] = hex64(spec_hash_value);
    return doc;
}

inline nlohmann::json cmd_eval(const EvalPaths& paths, const SweepProtocol& protocol, const MetricOptions& opt) {
    detail::Stopwatch sw;
    const World world = load_world(paths.world);
    const uint64_t ck_hash = file_hash(paths.checkpoint);
    const Checkpoint ck = load_checkpoint(paths.checkpoint, world.hash);
    const Generator gen(ck, world);
    const SweepResults raw = run_sweep(gen, protocol);
    const MetricsReport rep = report(raw, opt);
    const std::string doc = eval_document(rep, ck_hash, world.hash).dump(2) + "\n";
    detail::write_text(paths.report, doc);
    const auto table_path =
        paths.table.empty() ? std::filesystem::path(paths.report.string() + ".txt") : paths.table;
    detail::write_text(table_path, format_table(rep));

    auto m = detail::manifest_base("eval");
    m["checkpoint_path"] = paths.checkpoint.string();
    m["checkpoint_hash"] = hex64(ck_hash);
    m["world_path"] = paths.world.string();
    m["spec_hash"] = hex64(world.hash);
    m["protocol"] = to_json(protocol);
    m["options"] = to_json(opt);
    m["report_path"] = paths.report.string();
    m["report_hash"] = hex64(fnv1a(doc));
    m["table_path"] = table_path.string();
    m["overall"] = to_json(rep.overall);
    m["timings"] = {{"total_seconds", sw.seconds()}};
    return m;
}

inline nlohmann::json cmd_generate(const std::filesystem::path& checkpoint, const std::filesystem::path& world_path,
                                   const GenerateRequest& req, const std::filesystem::path& svg_out,
                                   GenerateResponse* response = nullptr) {
    detail::Stopwatch sw;
    const World world = load_world(world_path);
    const Checkpoint ck = load_checkpoint(checkpoint, world.hash);
    const Generator gen(ck, world);
    const Service svc(gen);
    // route through the service validator so CLI and HTTP accept the same inputs
    GenerateRequest parsed;
    try {
        parsed = svc.parse_request(to_json(req));
    } catch (const service_error& e) {
        throw validation_error(e.what(), e.field());
    }
    GenerateResponse resp;
    try {
        resp = svc.generate(parsed);
    } catch (const service_error& e) {
        throw numeric_error(e.what());
    }
    if (!svg_out.empty())
        detail::write_text(svg_out, resp.render);
    auto m = detail::manifest_base("generate");
    m["checkpoint_path"] = checkpoint.string();
    m["checkpoint_hash"] = hex64(file_hash(checkpoint));
    m["world_path"] = world_path.string();
    m["spec_hash"] = hex64(world.hash);
    m["request"] = to_json(parsed);
    m["measured_attributes"] = resp.measured_attributes;
    m["identity"] = resp.identity;
    if (!svg_out.empty())
        m["svg_path"] = svg_out.string();
    m["timings"] = {{"total_seconds", sw.seconds()}};
    if (response)
        *response = std::move(resp);
    return m;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
    std::string label;
    bool use_disentanglement = true;
    bool use_structure = true;
    double structure_threshold = 0.1;
};

/// Loss ablation rows followed by the structure-threshold sweep.
inline std::vector<AblationRow> ablation_rows(const std::string& set) {
    std::vector<AblationRow> rows;
    if (set == "losses" || set == "all") {
        rows.push_back({"diff", false, false, 0.1});
        rows.push_back({"diff+clss", true, false, 0.1});
        rows.push_back({"diff+clss+st", true, true, 0.1});
    }
    if (set == "threshold" || set == "all") {
        rows.push_back({"tau=0.5", true, true, 0.5});
        rows.push_back({"tau=0.3", true, true, 0.3});
        if (set == "threshold")
            rows.push_back({"tau=0.1", true, true, 0.1});
    }
    require(!rows.empty(), "unknown ablation set '" + set + "' (want losses, threshold or all)", "set");
    return rows;
}

inline std::string ablation_checkpoint_name(const AblationRow& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%s_tau%.3g.csck", r.use_disentanglement ? "clss" : "noclss",
                  r.use_structure ? "_st" : "", r.structure_threshold);
    return buf;
}

inline nlohmann::json cmd_ablate(const RunConfig& base, const std::filesystem::path& world_path,
                                 const std::filesystem::path& data_path, const std::filesystem::path& out_dir,
                                 const std::string& set, std::ostream* progress = nullptr) {
    detail::Stopwatch sw;
    const auto rows = ablation_rows(set);
    std::filesystem::create_directories(out_dir);
    nlohmann::json runs = nlohmann::json::array();
    std::vector<std::pair<std::string, MetricSummary>> table;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
        RunConfig cfg = base;
        cfg.train.use_disentanglement = row.use_disentanglement;
        cfg.train.use_structure = row.use_structure;
        cfg.train.structure_threshold = row.structure_threshold;
        const auto ck_path = out_dir / ablation_checkpoint_name(row);
        if (progress)
            *progress << "== " << row.label << " -> " << ck_path.string() << std::endl;
        auto tm = cmd_train(cfg, {world_path, data_path, ck_path, {}}, progress);
        auto em = cmd_eval({ck_path, world_path, out_dir / (ck_path.stem().string() + ".report.json"), {}}, cfg.eval,
                           cfg.metrics);
        const MetricSummary s = metric_summary_from_json(em["overall"]);
        table.emplace_back(row.label, s);
        rows_json.push_back({{"label", row.label},
                             {"use_disentanglement", row.use_disentanglement},
                             {"use_structure", row.use_structure},
                             {"structure_threshold", row.structure_threshold},
                             {"checkpoint_hash", tm["checkpoint_hash"]},
                             {"report_hash", em["report_hash"]},
                             {"overall", to_json(s)}});
        runs.push_back({{"train", tm}, {"eval", em}});
    }
    const std::string text = format_table(table);
    detail::write_text(out_dir / "ablation.txt", text);
    detail::write_text(out_dir / "ablation.json",
                       nlohmann::json{{"schema", "compslider.ablation/v1"}, {"set", set}, {"rows", rows_json}}.dump(2) +
                           "\n");
    auto m = detail::manifest_base("ablate");
    m["config"] = to_json(base);
    m["set"] = set;
    m["runs"] = runs;
    m["table"] = text;
    m["table_path"] = (out_dir / "ablation.txt").string();
    m["timings"] = {{"total_seconds", sw.seconds()}};
    return m;
}

} // namespace compslider
