// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "derain/container.hpp"
#include "derain/denoiser.hpp"

namespace derain {

using nlohmann::json;

inline json config_to_json(const DenoiserConfig& c) {
    return json{{"num_blocks", c.num_blocks}, {"dim", c.dim},           {"heads", c.heads},
                {"text_len", c.text_len},     {"patch", c.patch},       {"frames", c.frames},
                {"channels", c.channels},     {"height", c.height},     {"width", c.width},
                {"mlp_ratio", c.mlp_ratio},   {"time_dim", c.time_dim}, {"timestep_scale", c.timestep_scale}};
}

inline DenoiserConfig config_from_json(const json& j) {
    DenoiserConfig c;
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.text_len = j.value("text_len", c.text_len);
    c.patch = j.value("patch", c.patch);
    c.frames = j.value("frames", c.frames);
    c.channels = j.value("channels", c.channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.time_dim = j.value("time_dim", c.time_dim);
    c.timestep_scale = j.value("timestep_scale", c.timestep_scale);
    c.validate();
    return c;
}

// Weights go to `path` as a VDT1 container; the architecture goes to
// `path + ".json"`.
template <class T>
void save_checkpoint(const std::string& path, const Denoiser<T>& model, const json& extra = json::object()) {
    std::vector<TensorEntry> entries;
    model.params().visit([&](const std::string& name, const Matrix<T>& m) { entries.push_back(matrix_entry(name, m)); });
    write_container_file(path, entries);
    json side = extra;
    side["format"] = "VDT1";
    side["config"] = config_to_json(model.config());
    std::ofstream out(path + ".json");
    if (!out) {
        throw std::runtime_error("cannot write '" + path + ".json'");
    }
    out << side.dump(2) << '\n';
}

inline json read_checkpoint_sidecar(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) {
        throw std::runtime_error("missing checkpoint sidecar '" + path + ".json'");
    }
    return json::parse(in);
}

template <class T = float>
Denoiser<T> load_checkpoint(const std::string& path) {
    const DenoiserConfig config = config_from_json(read_checkpoint_sidecar(path).at("config"));
    const std::vector<TensorEntry> entries = read_container_file(path);
    DenoiserParams<T> params = DenoiserParams<T>::zeros(config);
    std::size_t used = 0;
    params.visit([&](const std::string& name, Matrix<T>& m) {
        const TensorEntry& e = find_entry(entries, name);
        if (e.dims.size() != 2 || e.dims[0] != m.rows || e.dims[1] != m.cols) {
            throw ContainerError("tensor '" + name + "' has the wrong shape for this architecture");
        }
        for (std::size_t i = 0; i < m.size(); ++i) {
            m.data[i] = static_cast<T>(e.data[i]);
        }
        ++used;
    });
    if (used != entries.size()) {
        throw ContainerError("checkpoint has tensors the architecture does not use");
    }
    return Denoiser<T>(config, std::move(params));
}

}  // namespace derain
