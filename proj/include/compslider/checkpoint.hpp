// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint file "CSCK", little-endian:
//
//   magic[4] | u32 version | u64 spec_hash | u64 step | u32 header_len | header JSON
//   | u32 tensor_count | tensors: u32 name_len, name, u32 rows, u32 cols, f32[rows*cols]
//
// The header JSON carries the denoiser config, the diffusion config and
// free-form run metadata.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "compslider/common.hpp"
#include "compslider/denoiser.hpp"
#include "compslider/diffusion.hpp"
#include "compslider/world.hpp"

namespace compslider {

struct DiffusionConfig {
    int T = 100;
    ScheduleKind kind = ScheduleKind::cosine;
    bool literal_reverse = false;
    bool deterministic_final_step = true;

    NoiseSchedule schedule() const { return make_schedule(T, kind); }
};

inline nlohmann::json to_json(const DiffusionConfig& c) {
    return {{"T", c.T},
            {"schedule", to_string(c.kind)},
            {"literal_reverse", c.literal_reverse},
            {"deterministic_final_step", c.deterministic_final_step}};
}

inline DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
    DiffusionConfig c;
    c.T = j.at("T").get<int>();
    c.kind = schedule_kind_from_string(j.at("schedule").get<std::string>());
    c.literal_reverse = j.value("literal_reverse", false);
    c.deterministic_final_step = j.value("deterministic_final_step", true);
    require(c.T >= 1, "diffusion T must be >= 1", "T");
    return c;
}

struct Checkpoint {
    ModelParams<float> params;
    DiffusionConfig diffusion;
    uint64_t spec_hash = 0;
    uint64_t step = 0;
    nlohmann::json meta = nlohmann::json::object();
};

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
    detail::BinaryWriter w(os);
    w.bytes("CSCK", 4);
    w.put<uint32_t>(1);
    w.put<uint64_t>(ck.spec_hash);
    w.put<uint64_t>(ck.step);
    nlohmann::json header = {{"denoiser", to_json(ck.params.cfg)},
                             {"diffusion", to_json(ck.diffusion)},
                             {"meta", ck.meta}};
    const std::string hs = header.dump();
    w.put<uint32_t>(static_cast<uint32_t>(hs.size()));
    w.bytes(hs.data(), hs.size());
    uint32_t count = 0;
    ck.params.visit([&](const std::string&, const Mat<float>&) { ++count; });
    w.put<uint32_t>(count);
    ck.params.visit([&](const std::string& name, const Mat<float>& m) {
        w.put<uint32_t>(static_cast<uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.put<uint32_t>(static_cast<uint32_t>(m.rows()));
        w.put<uint32_t>(static_cast<uint32_t>(m.cols()));
        w.bytes(m.data(), static_cast<size_t>(m.size()) * sizeof(float));
    });
}

/// Writes the checkpoint and returns the FNV-1a hash of its bytes.
inline uint64_t save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ostringstream buf(std::ios::binary);
    write_checkpoint(ck, buf);
    const std::string bytes = buf.str();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw io_error("cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw io_error("write failed for " + path.string());
    return fnv1a(bytes);
}

inline uint64_t checkpoint_hash(const Checkpoint& ck) {
    std::ostringstream buf(std::ios::binary);
    write_checkpoint(ck, buf);
    return fnv1a(buf.str());
}

/// Loads a checkpoint; a nonzero `expected_spec_hash` must match the stored world hash.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, uint64_t expected_spec_hash = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw io_error("cannot open " + path.string());
    detail::BinaryReader r(is, "checkpoint " + path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "CSCK", 4) != 0)
        throw io_error(path.string() + " is not a CSCK checkpoint");
    if (r.get<uint32_t>() != 1)
        throw io_error("unsupported checkpoint version in " + path.string());
    Checkpoint ck;
    ck.spec_hash = r.get<uint64_t>();
    if (expected_spec_hash != 0 && ck.spec_hash != expected_spec_hash)
        throw validation_error("checkpoint world hash " + hex64(ck.spec_hash) + " does not match world " +
                                   hex64(expected_spec_hash),
                               "spec_hash");
    ck.step = r.get<uint64_t>();
    const uint32_t hlen = r.get<uint32_t>();
    if (hlen > (1u << 24))
        throw io_error("corrupt checkpoint header in " + path.string());
    std::string hs(hlen, '\0');
    r.bytes(hs.data(), hlen);
    try {
        auto header = nlohmann::json::parse(hs);
        const DenoiserConfig cfg = denoiser_config_from_json(header.at("denoiser"));
        ck.diffusion = diffusion_config_from_json(header.at("diffusion"));
        ck.meta = header.value("meta", nlohmann::json::object());
        // shapes come from a freshly initialized model; data from the file
        ck.params = init_params<float>(cfg, 0);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    std::map<std::string, Mat<float>> tensors;
    const uint32_t count = r.get<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = r.get<uint32_t>();
        if (nlen > 4096)
            throw io_error("corrupt tensor name in " + path.string());
        std::string name(nlen, '\0');
        r.bytes(name.data(), nlen);
        const uint32_t rows = r.get<uint32_t>(), cols = r.get<uint32_t>();
        if (static_cast<uint64_t>(rows) * cols > (1ull << 30))
            throw io_error("corrupt tensor shape in " + path.string());
        Mat<float> m(rows, cols);
        r.bytes(m.data(), static_cast<size_t>(m.size()) * sizeof(float));
        tensors.emplace(std::move(name), std::move(m));
    }
    ck.params.visit([&](const std::string& name, Mat<float>& m) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw io_error("checkpoint " + path.string() + " is missing tensor " + name);
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
            throw io_error("checkpoint tensor " + name + " has the wrong shape");
        m = std::move(it->second);
    });
    return ck;
}

} // namespace compslider
