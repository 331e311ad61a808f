// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "loradrop/adapt/adapt.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/harness/config.hpp"
#include "loradrop/importance/importance.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::harness {

/// Task data plus the frozen, pretrained base shared by every run on that task.
struct Environment {
    data::Dataset train;
    data::Dataset dev;
    model::TransformerModel base;
};

/// Generates the task data and pretrains (or loads) the base; the base comes back frozen.
Environment prepare_environment(const ExperimentConfig& config);

/// Clone of the base with a fresh, trainable head seeded by `seeds.head`.
model::TransformerModel task_model(const Environment& env, const RunSeeds& seeds);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double dev_accuracy = 0.0;
};

struct FinetuneResult {
    std::vector<EpochRecord> curve;
    /// Epoch with the highest dev accuracy (earliest on ties); 0 when no epochs ran.
    int best_epoch = 0;
    double dev_accuracy = 0.0;
    double dev_loss = 0.0;
    /// Adapters and head as they were at the best epoch.
    std::optional<lora::AdapterTopology> best_topology;
    std::vector<core::Tensor> best_head;
};

/// Trains the topology's adapters and the model head with Adam; the base stays frozen.
/// Evaluates on `dev` after every epoch and keeps the best epoch's state.
FinetuneResult finetune(model::TransformerModel& model, lora::AdapterTopology& topology, const data::Dataset& train,
                        const data::Dataset& dev, const OptimConfig& optim, std::uint64_t order_seed);

struct RunResult {
    std::string task;
    adapt::AblationKind ablation = adapt::AblationKind::lora_drop;
    double threshold = 1.0;
    RunSeeds seeds;
    double dev_accuracy = 0.0;
    double dev_loss = 0.0;
    int best_epoch = 0;
    std::vector<EpochRecord> curve;
    long lora_params = 0;
    long lora_plus_head_params = 0;
    std::map<lora::MatrixKind, int> retained;
    std::optional<adapt::RetentionPlan> plan;
    /// Accuracy of the retained-only inference view (infer_keep_* ablations).
    std::optional<double> masked_accuracy;
    double wall_clock_seconds = 0.0;
};

/// Deterministic fields only (no wall clock).
nlohmann::json result_to_json(const RunResult& result);
/// epoch,train_loss,dev_loss,dev_accuracy
std::string metrics_csv(const RunResult& result);

/// Importance evaluation with the config's sampling and warm-up settings.
importance::ImportanceReport run_importance(const ExperimentConfig& config, const model::TransformerModel& model,
                                            const data::Dataset& train, lora::CapturedOutputs* capture = nullptr);

/// Adapter build options for the config's rank, scale and seeds.
adapt::BuildOptions build_options(const ExperimentConfig& config);

/// A finished fine-tune: its result plus the best epoch's adapters and head.
struct TrainedRun {
    RunResult result;
    lora::AdapterTopology topology{1};
    std::vector<core::Tensor> head;
};

/// Builds the ablation topology from `plan` and fine-tunes it.
TrainedRun train_with_plan(const ExperimentConfig& config, const Environment& env, const adapt::RetentionPlan& plan);

/// Base clone carrying the run's trained head.
model::TransformerModel trained_model(const Environment& env, const TrainedRun& run);

/// Importance of the trained adapters themselves: the capture over the same
/// stratified sample as `warmup_report`, with no further training.
importance::ImportanceReport trained_importance(const Environment& env, const TrainedRun& run,
                                                const importance::ImportanceReport& warmup_report);

/// Dev accuracy of a trained run restricted to the sites in `mask`.
double masked_accuracy(const Environment& env, const TrainedRun& run, const lora::SiteMask& mask);

/// train_with_plan(); for infer_keep_* also evaluates the masked view of the
/// best epoch, ranking sites by trained_importance().
RunResult run_with_plan(const ExperimentConfig& config, const Environment& env,
                        const importance::ImportanceReport& report, const adapt::RetentionPlan& plan);

/// importance -> selection -> topology -> fine-tune. Errors carry the failing
/// stage. When output_dir is set, writes config.json, importance.json,
/// histogram.csv, plan.json, topology.json, result.json, metrics.csv and manifest.json.
RunResult run_pipeline(const ExperimentConfig& config, const Environment* env = nullptr);

}  // namespace loradrop::harness
