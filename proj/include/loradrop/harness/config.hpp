// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "loradrop/adapt/adapt.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/model/config.hpp"

namespace loradrop::harness {

/// Seeds of the per-run stochastic components. The dataset and the base model
/// have their own seeds (TaskSpec::seed, ExperimentConfig::model_seed) so that
/// replicate runs can share them.
struct RunSeeds {
    std::uint64_t head = 0;
    std::uint64_t sampling = 0;
    std::uint64_t warmup = 0;
    std::uint64_t adapters = 0;
    std::uint64_t ablation = 0;
    std::uint64_t order = 0;

    /// Every component seed derived from one master seed.
    static RunSeeds derive(std::uint64_t master);
    bool operator==(const RunSeeds&) const = default;
};

struct OptimConfig {
    int epochs = 10;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    bool operator==(const OptimConfig&) const = default;
};

struct PretrainConfig {
    long steps = 1500;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    int train_size = 8000;
    /// Family of the generic pretraining task; defaults to the task's own.
    std::optional<data::TaskFamily> family;
    bool operator==(const PretrainConfig&) const = default;
};

struct ExperimentConfig {
    model::ModelConfig model;
    data::TaskSpec task;
    std::uint64_t model_seed = 0;
    PretrainConfig pretrain;
    /// Frozen base to load instead of pretraining.
    std::optional<std::filesystem::path> base_checkpoint;

    int rank = 8;
    double scale = 1.0;
    double alpha = 0.10;
    int warmup_epochs = 3;
    std::optional<long> warmup_max_steps;
    double warmup_learning_rate = 1e-3;
    double threshold = 0.9;
    adapt::AblationKind ablation = adapt::AblationKind::lora_drop;
    OptimConfig finetune;
    RunSeeds seeds = RunSeeds::derive(0);
    std::filesystem::path output_dir;

    /// Throws ValidationError on out-of-range values or task/model mismatch.
    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

}  // namespace loradrop::harness
