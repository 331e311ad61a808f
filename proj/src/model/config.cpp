// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/model/config.hpp"

#include <string>

#include "loradrop/core/error.hpp"

namespace loradrop::model {

void ModelConfig::validate() const {
    if (num_layers < 1 || d_model < 1 || num_heads < 1 || d_ff < 1 || vocab_size < 1 || max_seq_len < 1 ||
        num_classes < 2) {
        throw ValidationError("model config extents must be positive (and num_classes >= 2)");
    }
    if (d_model % num_heads != 0) {
        throw ValidationError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                              std::to_string(num_heads));
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"num_layers", c.num_layers},   {"d_model", c.d_model},         {"num_heads", c.num_heads},
            {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
            {"num_classes", c.num_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.value("num_layers", c.num_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.validate();
    return c;
}

}  // namespace loradrop::model
