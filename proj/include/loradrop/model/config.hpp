// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "json.hpp"

namespace loradrop::model {

struct ModelConfig {
    int num_layers = 6;
    int d_model = 32;
    int num_heads = 2;
    int d_ff = 64;
    int vocab_size = 16;
    int max_seq_len = 16;
    int num_classes = 4;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace loradrop::model
