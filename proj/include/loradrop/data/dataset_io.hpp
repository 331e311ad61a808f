// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "json.hpp"
#include "loradrop/data/task.hpp"

namespace loradrop::data {

inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

/// Line-delimited JSON: a header record carrying the TaskSpec, split name and
/// example count, followed by one `{id, tokens, label}` record per example.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace loradrop::data
