// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "json.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::model {

inline constexpr int kCheckpointFormatVersion = 1;

/// {"format":"loradrop.checkpoint","version":1,"config":{...},
///  "parameters":[{"name","shape","values","requires_grad"}...]}
/// Doubles are written with round-trip precision, so save/load is bit-exact.
nlohmann::json checkpoint_to_json(const TransformerModel& model);
TransformerModel checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace loradrop::model
