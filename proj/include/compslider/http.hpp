// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON over HTTP/1.1 binding of compslider::Service.
//
//   GET  /healthz          {"status":"ok","model_step":...}
//   GET  /schema           attribute and prompt-class names, limits
//   POST /generate         GenerateRequest -> GenerateResponse
//   POST /batch-generate   {"requests":[...]} -> {"responses":[...]}
//
// Errors are {"error":{"message","status","field"?}} with status 400
// (validation) or 500 (numeric failure).

#include <string>

// Eigen first: <resolv.h> (pulled in by httplib) defines a `_res` macro that
// breaks Eigen's BLAS bindings when they are parsed after it.
#include "compslider/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace compslider {

inline void install_routes(httplib::Server& server, const Service& svc) {
    const std::string origin = svc.options().cors_origin;
    auto send = [origin](httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_content(body.dump(), "application/json");
    };
    auto guarded = [send](auto&& fn) {
        return [send, fn](const httplib::Request& req, httplib::Response& res) {
            try {
                send(res, 200, fn(req));
            } catch (const service_error& e) {
                send(res, e.status(), e.to_json());
            } catch (const nlohmann::json::exception& e) {
                send(res, 400, service_error(400, std::string("malformed JSON: ") + e.what()).to_json());
            } catch (const validation_error& e) {
                send(res, 400, service_error(400, e.what(), e.field()).to_json());
            } catch (const std::exception& e) {
                send(res, 500, service_error(500, e.what()).to_json());
            }
        };
    };
    server.Get("/healthz", guarded([&svc](const httplib::Request&) { return svc.healthz(); }));
    server.Get("/schema", guarded([&svc](const httplib::Request&) { return svc.schema(); }));
    server.Post("/generate", guarded([&svc](const httplib::Request& r) {
                    return svc.handle_generate(nlohmann::json::parse(r.body));
                }));
    server.Post("/batch-generate", guarded([&svc](const httplib::Request& r) {
                    return svc.handle_batch(nlohmann::json::parse(r.body));
                }));
    server.Options(R"(/.*)", [origin](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Max-Age", "600");
    });
}

} // namespace compslider
