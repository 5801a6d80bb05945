// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

// compslider: world creation, data generation, training, evaluation,
// ablation, one-shot generation and serving.
//
// Exit codes: 0 success, 1 unexpected failure, 2 validation, 3 I/O, 4 numeric.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "compslider/commands.hpp"
#include "compslider/config.hpp"
#include "compslider/http.hpp"
#include "compslider/service.hpp"

#ifdef COMPSLIDER_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace {

using namespace compslider;

enum Exit { ok = 0, failure = 1, validation = 2, io = 3, numeric = 4 };

void set_threads() {
    int n = 1;
    if (const char* env = std::getenv("COMPSLIDER_THREADS"))
        n = std::max(1, std::atoi(env));
#ifdef COMPSLIDER_OPENBLAS
    openblas_set_num_threads(n);
#else
    (void)n;
#endif
}

RunConfig config_or_default(const std::string& path) {
    if (path.empty()) {
        RunConfig c;
        c.finalize();
        return c;
    }
    return load_run_config(path);
}

void emit(const nlohmann::json& manifest, const std::string& path) {
    if (!path.empty())
        write_manifest(manifest, path);
}

std::vector<double> parse_sliders(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : detail::split(s, ',')) {
        double v;
        if (!detail::parse_number(part, v))
            throw validation_error("--sliders: '" + part + "' is not a number", "sliders");
        out.push_back(v);
    }
    return out;
}

std::pair<std::string, int> parse_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos)
        throw validation_error("bind address must be host:port, got '" + addr + "'", "addr");
    int port;
    if (!detail::parse_number(addr.substr(colon + 1), port) || port < 0 || port > 65535)
        throw validation_error("bad port in bind address '" + addr + "'", "addr");
    return {addr.substr(0, colon), port};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slider-conditioned diffusion over condition latents in a synthetic oracle world"};
    app.require_subcommand(1);
    std::string manifest;
    app.add_option("--manifest", manifest, "Write the run manifest (JSON) to this path");

    // world-init
    auto* wi = app.add_subcommand("world-init", "Write a world file from a run config");
    std::string wi_config, wi_out = "world.json";
    wi->add_option("--config", wi_config, "Run config (defaults when omitted)");
    wi->add_option("-o,--out", wi_out, "World file to write");

    // data-gen
    auto* dg = app.add_subcommand("data-gen", "Generate a dataset file for a world");
    std::string dg_world = "world.json", dg_out = "data.csw", dg_config;
    DataConfig dg_data;
    dg->add_option("--config", dg_config, "Run config whose [data] section supplies defaults");
    dg->add_option("--world", dg_world, "World file");
    auto* dg_count = dg->add_option("--count", dg_data.count, "Number of records");
    auto* dg_sigma = dg->add_option("--sigma", dg_data.noise_sigma, "Observation noise sigma");
    auto* dg_seed = dg->add_option("--seed", dg_data.seed, "Sampling seed");
    dg->add_option("-o,--out", dg_out, "Dataset file to write");

    // train
    auto* tr = app.add_subcommand("train", "Train a denoiser and classifier");
    std::string tr_config;
    TrainPaths tr_paths{"world.json", "data.csw", "model.csck", {}};
    int tr_steps = 0;
    bool tr_quiet = false;
    tr->add_option("--config", tr_config, "Run config");
    tr->add_option("--world", tr_paths.world, "World file");
    tr->add_option("--data", tr_paths.data, "Dataset file");
    tr->add_option("-o,--out", tr_paths.checkpoint, "Checkpoint to write");
    tr->add_option("--metrics-log", tr_paths.metrics_log, "NDJSON metrics log (default <out>.metrics.ndjson)");
    tr->add_option("--steps", tr_steps, "Override [train] total_steps");
    tr->add_flag("-q,--quiet", tr_quiet, "No progress output");

    // eval
    auto* ev = app.add_subcommand("eval", "Run the slider sweep and write a metrics report");
    std::string ev_config;
    EvalPaths ev_paths{"model.csck", "world.json", "report.json", {}};
    int ev_prompts = 0;
    ev->add_option("--config", ev_config, "Run config whose [eval] section supplies the protocol");
    ev->add_option("--checkpoint", ev_paths.checkpoint, "Checkpoint file");
    ev->add_option("--world", ev_paths.world, "World file");
    ev->add_option("-o,--out", ev_paths.report, "Report JSON to write");
    ev->add_option("--table", ev_paths.table, "Plain-text table (default <out>.txt)");
    ev->add_option("--prompts", ev_prompts, "Override [eval] n_prompts");

    // generate
    auto* ge = app.add_subcommand("generate", "Generate one latent and render it");
    std::string ge_ckpt = "model.csck", ge_world = "world.json", ge_sliders, ge_svg;
    GenerateRequest ge_req;
    ge->add_option("--checkpoint", ge_ckpt, "Checkpoint file");
    ge->add_option("--world", ge_world, "World file");
    ge->add_option("--sliders", ge_sliders, "Comma-separated slider values in [0,1]")->required();
    ge->add_option("--prompt", ge_req.prompt_class, "Prompt class index");
    ge->add_option("--seed", ge_req.seed, "Sampler seed");
    ge->add_option("--steps", ge_req.steps, "Sampler steps (0 = full schedule)");
    ge->add_option("--svg", ge_svg, "Write the rendered glyph here");

    // serve
    auto* se = app.add_subcommand("serve", "Serve the HTTP inference API");
    std::string se_ckpt = "model.csck", se_world = "world.json", se_addr = "127.0.0.1:8080";
    ServiceOptions se_opt;
    se->add_option("--checkpoint", se_ckpt, "Checkpoint file");
    se->add_option("--world", se_world, "World file");
    se->add_option("--addr", se_addr, "Bind address host:port")->envname("COMPSLIDER_BIND");
    se->add_option("--max-batch", se_opt.max_batch, "Largest accepted batch")->envname("COMPSLIDER_MAX_BATCH");
    se->add_option("--cors-origin", se_opt.cors_origin, "Access-Control-Allow-Origin value")
        ->envname("COMPSLIDER_CORS_ORIGIN");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and evaluate the loss and threshold ablations");
    std::string ab_config, ab_world = "world.json", ab_data = "data.csw", ab_out = "ablation", ab_set = "losses";
    int ab_steps = 0;
    ab->add_option("--config", ab_config, "Run config");
    ab->add_option("--world", ab_world, "World file");
    ab->add_option("--data", ab_data, "Dataset file");
    ab->add_option("-o,--out-dir", ab_out, "Output directory");
    ab->add_option("--set", ab_set, "losses, threshold or all")->check(CLI::IsMember({"losses", "threshold", "all"}));
    ab->add_option("--steps", ab_steps, "Override [train] total_steps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? Exit::ok : Exit::validation;
    }

    set_threads();
    try {
        if (*wi) {
            auto m = cmd_world_init(config_or_default(wi_config), wi_out);
            std::cout << "world " << wi_out << " spec_hash " << m["spec_hash"].get<std::string>() << "\n";
            emit(m, manifest);
        } else if (*dg) {
            DataConfig data = config_or_default(dg_config).data;
            if (*dg_count)
                data.count = dg_data.count;
            if (*dg_sigma)
                data.noise_sigma = dg_data.noise_sigma;
            if (*dg_seed)
                data.seed = dg_data.seed;
            auto m = cmd_data_gen(dg_world, data, dg_out);
            std::cout << "dataset " << dg_out << " (" << data.count << " records) hash "
                      << m["dataset_hash"].get<std::string>() << "\n";
            emit(m, manifest);
        } else if (*tr) {
            RunConfig cfg = config_or_default(tr_config);
            if (tr_steps > 0) {
                cfg.train.total_steps = tr_steps;
                cfg.finalize();
            }
            auto m = cmd_train(cfg, tr_paths, tr_quiet ? nullptr : &std::cerr);
            std::cout << "checkpoint " << tr_paths.checkpoint.string() << " hash "
                      << m["checkpoint_hash"].get<std::string>() << "\n";
            emit(m, manifest);
        } else if (*ev) {
            RunConfig cfg = config_or_default(ev_config);
            if (ev_prompts > 0) {
                cfg.eval.n_prompts = ev_prompts;
                cfg.finalize();
            }
            auto m = cmd_eval(ev_paths, cfg.eval, cfg.metrics);
            std::ifstream t(m["table_path"].get<std::string>());
            std::cout << t.rdbuf() << "report " << ev_paths.report.string() << " hash "
                      << m["report_hash"].get<std::string>() << "\n";
            emit(m, manifest);
        } else if (*ge) {
            ge_req.sliders = parse_sliders(ge_sliders);
            GenerateResponse resp;
            auto m = cmd_generate(ge_ckpt, ge_world, ge_req, ge_svg, &resp);
            const World world = load_world(ge_world);
            const auto names = attribute_names(world.n_attributes());
            std::printf("%-10s %9s %9s\n", "attribute", "requested", "measured");
            for (size_t i = 0; i < names.size(); ++i)
                std::printf("%-10s %9.4f %9.4f\n", names[i].c_str(), ge_req.sliders[i], resp.measured_attributes[i]);
            if (!ge_svg.empty())
                std::printf("svg %s\n", ge_svg.c_str());
            emit(m, manifest);
        } else if (*se) {
            const auto [host, port] = parse_addr(se_addr);
            const World world = load_world(se_world);
            const Checkpoint ck = load_checkpoint(se_ckpt, world.hash);
            const Generator gen(ck, world);
            const Service svc(gen, se_opt);
            httplib::Server server;
            install_routes(server, svc);
            if (!server.bind_to_port(host, port)) {
                std::cerr << "error: cannot bind " << se_addr << "\n";
                return Exit::io;
            }
            auto m = detail::manifest_base("serve");
            m["checkpoint_path"] = se_ckpt;
            m["checkpoint_hash"] = hex64(file_hash(se_ckpt));
            m["world_path"] = se_world;
            m["spec_hash"] = hex64(world.hash);
            m["addr"] = se_addr;
            m["max_batch"] = se_opt.max_batch;
            emit(m, manifest);
            std::cerr << "listening on " << se_addr << "\n";
            if (!server.listen_after_bind()) {
                std::cerr << "error: server stopped unexpectedly\n";
                return Exit::io;
            }
        } else if (*ab) {
            RunConfig cfg = config_or_default(ab_config);
            if (ab_steps > 0) {
                cfg.train.total_steps = ab_steps;
                cfg.finalize();
            }
            auto m = cmd_ablate(cfg, ab_world, ab_data, ab_out, ab_set, &std::cerr);
            std::cout << m["table"].get<std::string>();
            emit(m, manifest);
        }
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return Exit::validation;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return Exit::io;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return Exit::io;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return Exit::numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return Exit::failure;
    }
    return Exit::ok;
}
