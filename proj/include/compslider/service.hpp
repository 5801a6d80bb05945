// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Transport-independent request handling for the inference service. The
// HTTP binding lives in compslider/http.hpp.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compslider/generate.hpp"
#include "compslider/world.hpp"

namespace compslider {

struct GenerateRequest {
    int prompt_class = 0;
    std::vector<double> sliders;
    uint64_t seed = 0;
    int steps = 0; // 0 = full schedule
};

struct GenerateResponse {
    std::vector<double> latent;
    std::vector<double> measured_attributes;
    std::vector<double> identity;
    std::string render;
    uint64_t model_step = 0;
};

inline nlohmann::json to_json(const GenerateRequest& r) {
    nlohmann::json j = {{"prompt_class", r.prompt_class}, {"sliders", r.sliders}, {"seed", r.seed}};
    if (r.steps > 0)
        j["steps"] = r.steps;
    return j;
}

inline nlohmann::json to_json(const GenerateResponse& r) {
    return {{"latent", r.latent},
            {"measured_attributes", r.measured_attributes},
            {"identity", r.identity},
            {"render", r.render},
            {"model_step", r.model_step}};
}

/// Error carrying an HTTP-style status code and the offending field.
class service_error : public std::runtime_error {
public:
    service_error(int status, const std::string& what, std::string field = {})
        : std::runtime_error(what), m_status(status), m_field(std::move(field)) {}
    int status() const noexcept { return m_status; }
    const std::string& field() const noexcept { return m_field; }

    nlohmann::json to_json() const {
        nlohmann::json e = {{"message", what()}, {"status", m_status}};
        if (!m_field.empty())
            e["field"] = m_field;
        return {{"error", e}};
    }

private:
    int m_status;
    std::string m_field;
};

struct ServiceOptions {
    int max_batch = 64;
    std::string cors_origin = "*";
};

class Service {
public:
    /// The generator (and the checkpoint and world behind it) must outlive the service.
    Service(const Generator& gen, ServiceOptions opt = {}) : m_gen(gen), m_opt(std::move(opt)) {
        require(m_opt.max_batch >= 0, "max_batch must be >= 0", "max_batch");
    }

    const ServiceOptions& options() const { return m_opt; }

    nlohmann::json healthz() const {
        return {{"status", "ok"},
                {"model_step", m_gen.checkpoint().step},
                {"spec_hash", hex64(m_gen.world().hash)}};
    }

    nlohmann::json schema() const {
        const auto& w = m_gen.world();
        return {{"attributes", attribute_names(w.n_attributes())},
                {"prompt_classes", prompt_class_names(w.n_prompt_classes())},
                {"n_attributes", w.n_attributes()},
                {"n_prompt_classes", w.n_prompt_classes()},
                {"latent_dim", w.latent_dim()},
                {"identity_dim", w.identity_dim()},
                {"max_steps", m_gen.schedule().T},
                {"max_batch", m_opt.max_batch},
                {"spec_hash", hex64(w.hash)}};
    }

    /// Validates a request document; `prefix` is prepended to field names.
    GenerateRequest parse_request(const nlohmann::json& j, const std::string& prefix = "") const {
        const auto& w = m_gen.world();
        auto field = [&](const std::string& f) { return prefix + f; };
        auto bad = [&](const std::string& f, const std::string& msg) {
            return service_error(400, field(f) + ": " + msg, field(f));
        };
        if (!j.is_object()) {
            const std::string where = prefix.empty() ? std::string() : prefix.substr(0, prefix.size() - 1);
            throw service_error(400, (where.empty() ? "request" : where) + " must be a JSON object", where);
        }
        for (const auto& [key, _] : j.items())
            if (key != "prompt_class" && key != "sliders" && key != "seed" && key != "steps")
                throw bad(key, "unknown field");
        GenerateRequest r;

        if (!j.contains("prompt_class"))
            throw bad("prompt_class", "required");
        const auto& pc = j["prompt_class"];
        if (!pc.is_number_integer())
            throw bad("prompt_class", "must be an integer");
        const auto pcv = pc.get<int64_t>();
        if (pcv < 0 || pcv >= w.n_prompt_classes())
            throw bad("prompt_class", "must be in [0, " + std::to_string(w.n_prompt_classes()) + ")");
        r.prompt_class = static_cast<int>(pcv);

        if (!j.contains("sliders"))
            throw bad("sliders", "required");
        const auto& sl = j["sliders"];
        if (!sl.is_array())
            throw bad("sliders", "must be an array of numbers");
        if (sl.size() != static_cast<size_t>(w.n_attributes()))
            throw bad("sliders", "expected " + std::to_string(w.n_attributes()) + " values, got " +
                                     std::to_string(sl.size()));
        for (size_t i = 0; i < sl.size(); ++i) {
            const std::string f = "sliders[" + std::to_string(i) + "]";
            if (!sl[i].is_number())
                throw bad(f, "must be a number");
            const double v = sl[i].get<double>();
            if (!(v >= 0.0 && v <= 1.0))
                throw bad(f, "must be in [0, 1]");
            r.sliders.push_back(v);
        }

        if (!j.contains("seed"))
            throw bad("seed", "required");
        const auto& sd = j["seed"];
        if (sd.is_number_unsigned())
            r.seed = sd.get<uint64_t>();
        else if (sd.is_number_integer() && sd.get<int64_t>() >= 0)
            r.seed = static_cast<uint64_t>(sd.get<int64_t>());
        else
            throw bad("seed", "must be a non-negative 64-bit integer");

        if (j.contains("steps")) {
            const auto& st = j["steps"];
            if (!st.is_number_integer())
                throw bad("steps", "must be an integer");
            const auto sv = st.get<int64_t>();
            if (sv < 1 || sv > m_gen.schedule().T)
                throw bad("steps", "must be in [1, " + std::to_string(m_gen.schedule().T) + "]");
            r.steps = static_cast<int>(sv);
        }
        return r;
    }

    GenerateResponse generate(const GenerateRequest& req) const {
        const auto& w = m_gen.world();
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(req.sliders.data(),
                                                              static_cast<Eigen::Index>(req.sliders.size()));
        ConditionLatent c;
        try {
            c = m_gen.generate_one(req.prompt_class, v, req.seed, req.steps);
        } catch (const numeric_error& e) {
            throw service_error(500, std::string("numeric failure: ") + e.what());
        }
        if (!c.values.allFinite())
            throw service_error(500, "numeric failure: non-finite latent");
        GenerateResponse out;
        out.latent.assign(c.values.data(), c.values.data() + c.values.size());
        const auto a = read_attributes(w, c, req.prompt_class).values;
        out.measured_attributes.assign(a.data(), a.data() + a.size());
        const auto z = read_identity(w, c, req.prompt_class).values;
        out.identity.assign(z.data(), z.data() + z.size());
        out.render = render(w, c, req.prompt_class).svg;
        out.model_step = m_gen.checkpoint().step;
        return out;
    }

    nlohmann::json handle_generate(const nlohmann::json& body) const {
        return to_json(generate(parse_request(body)));
    }

    /// Body: {"requests": [...]}. Each entry is handled exactly like a single request.
    nlohmann::json handle_batch(const nlohmann::json& body) const {
        if (!body.is_object() || !body.contains("requests"))
            throw service_error(400, "requests: required", "requests");
        const auto& reqs = body["requests"];
        if (!reqs.is_array())
            throw service_error(400, "requests: must be an array", "requests");
        if (reqs.size() > static_cast<size_t>(m_opt.max_batch))
            throw service_error(400,
                                "requests: batch of " + std::to_string(reqs.size()) + " exceeds max_batch " +
                                    std::to_string(m_opt.max_batch),
                                "requests");
        for (const auto& [key, _] : body.items())
            if (key != "requests")
                throw service_error(400, key + ": unknown field", key);
        std::vector<GenerateRequest> parsed;
        for (size_t i = 0; i < reqs.size(); ++i)
            parsed.push_back(parse_request(reqs[i], "requests[" + std::to_string(i) + "]."));
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : parsed)
            out.push_back(to_json(generate(r)));
        return {{"responses", std::move(out)}};
    }

private:
    const Generator& m_gen;
    ServiceOptions m_opt;
};

} // namespace compslider
