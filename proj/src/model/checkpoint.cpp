// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/model/checkpoint.hpp"

#include <string>
#include <vector>

#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"

namespace loradrop::model {

nlohmann::json checkpoint_to_json(const TransformerModel& model) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, t] : model.named_parameters()) {
        params.push_back({{"name", name},
                          {"shape", t.shape()},
                          {"values", std::vector<double>(t.data().begin(), t.data().end())},
                          {"requires_grad", t.requires_grad()}});
    }
    return {{"format", "loradrop.checkpoint"},
            {"version", kCheckpointFormatVersion},
            {"config", to_json(model.config())},
            {"parameters", std::move(params)}};
}

TransformerModel checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "loradrop.checkpoint") throw ParseError("not a checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw ParseError("unsupported checkpoint version " + std::to_string(version));
        }
        const auto config = model_config_from_json(j.at("config"));
        std::vector<NamedTensor> tensors;
        for (const auto& p : j.at("parameters")) {
            auto shape = p.at("shape").get<core::Shape>();
            auto values = p.at("values").get<std::vector<double>>();
            tensors.emplace_back(p.at("name").get<std::string>(),
                                 core::Tensor::from_vector(std::move(shape), std::move(values),
                                                           p.value("requires_grad", true)));
        }
        return from_named(config, tensors);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
    core::write_file_atomic(path, checkpoint_to_json(model).dump());
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(core::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace loradrop::model
