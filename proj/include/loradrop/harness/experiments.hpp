// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "loradrop/harness/runner.hpp"

namespace loradrop::harness {

/// Config for replicate `seed` (every run seed derived from it).
ExperimentConfig with_seed(ExperimentConfig config, std::uint64_t seed);

struct SweepRow {
    double threshold = 0.0;
    std::map<lora::MatrixKind, double> mean_retained;
    double mean_accuracy = 0.0;
    double mean_lora_params = 0.0;
    std::vector<RunResult> runs;
};

/// One pipeline run per threshold per seed; importance is evaluated once per seed.
std::vector<SweepRow> sweep_threshold(const ExperimentConfig& config, const Environment& env,
                                      std::span<const double> thresholds, std::span<const std::uint64_t> seeds);
/// threshold,mean_retained_query,mean_retained_value,mean_accuracy,mean_lora_params,seeds
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct AblationRun {
    adapt::AblationKind kind;
    std::uint64_t seed = 0;
    RunResult result;
};

struct AblationTable {
    std::vector<AblationRun> runs;
    /// Retained-only inference on the trained full_lora runs, per seed, with
    /// sites ranked by the trained adapters' own importance.
    std::vector<double> keep_large;
    std::vector<double> keep_small;
    /// Same views ranked by the warm-up importance instead.
    std::vector<double> keep_large_warmup;
    std::vector<double> keep_small_warmup;

    double mean_accuracy(adapt::AblationKind kind) const;
};

inline constexpr adapt::AblationKind kTrainedAblations[] = {
    adapt::AblationKind::lora_drop, adapt::AblationKind::without_share, adapt::AblationKind::inverse,
    adapt::AblationKind::random_k,  adapt::AblationKind::top_k,         adapt::AblationKind::full_lora,
};

/// Every kind with shared seeds and the lora_drop plan's k. When full_lora is
/// among the kinds, its trained adapters also yield the keep-large/keep-small
/// inference comparison.
AblationTable run_ablations(const ExperimentConfig& config, const Environment& env,
                            std::span<const std::uint64_t> seeds,
                            std::span<const adapt::AblationKind> kinds = kTrainedAblations);
/// ablation,seed,k_query,k_value,lora_params,dev_accuracy (one row per run, then per-kind means with seed "mean").
std::string ablation_csv(const AblationTable& table);
/// seed,keep_large,keep_small,keep_large_warmup,keep_small_warmup
std::string keep_csv(const AblationTable& table);

struct AlphaPair {
    std::uint64_t seed = 0;
    lora::MatrixKind group = lora::MatrixKind::query;
    double ratio_a = 0.0;
    double ratio_b = 0.0;
    double spearman = 0.0;
};

/// Importance per ratio under one warm-up step budget: the steps that
/// config.warmup_epochs take at the smallest ratio. Returns every pair per group per seed.
std::vector<AlphaPair> sweep_alpha(const ExperimentConfig& config, const Environment& env,
                                   std::span<const double> ratios, std::span<const std::uint64_t> seeds);
/// seed,group,ratio_a,ratio_b,spearman
std::string alpha_csv(const std::vector<AlphaPair>& pairs);

struct HeatmapCell {
    std::string task;
    std::uint64_t seed = 0;
    lora::MatrixKind group = lora::MatrixKind::query;
    int layer = 0;
    double g = 0.0;
    double importance = 0.0;
};

/// Importance reports for one task across seeds, flattened to cells.
std::vector<HeatmapCell> importance_cells(const ExperimentConfig& config, const Environment& env,
                                          std::span<const std::uint64_t> seeds,
                                          std::vector<importance::ImportanceReport>* reports = nullptr);
/// task,seed,group,layer,importance,g
std::string heatmap_csv(const std::vector<HeatmapCell>& cells);

}  // namespace loradrop::harness
