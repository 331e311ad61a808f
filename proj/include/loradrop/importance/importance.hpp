// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/lora/capture.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::importance {

struct SamplingConfig {
    double ratio = 0.10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct WarmupConfig {
    int epochs = 3;
    /// Optional cap on optimizer steps across all epochs.
    std::optional<long> max_steps;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    int rank = 8;
    double scale = 1.0;
    /// Seeds the warm-up adapters and the batch order.
    std::uint64_t seed = 0;

    void validate() const;
};

/// Per-class proportional subset in dataset order. Each class keeps
/// round-half-up(ratio * count) examples, at least one when non-empty.
data::Dataset stratified_sample(const data::Dataset& dataset, const SamplingConfig& config);

/// I = g / Σg. Throws "degenerate importance: all-zero group" when Σg = 0.
std::vector<double> normalize(std::span<const double> g);

struct GroupImportance {
    std::vector<double> g;
    std::vector<double> importance;
};

struct ImportanceReport {
    std::map<lora::MatrixKind, GroupImportance> groups;
    SamplingConfig sampling;
    WarmupConfig warmup;
    std::string dataset_fingerprint;
    std::vector<int> sample_ids;
    long warmup_steps = 0;

    int num_layers() const;
    const std::vector<double>& importance(lora::MatrixKind kind) const { return groups.at(kind).importance; }
};

inline constexpr int kImportanceFormatVersion = 1;

nlohmann::json report_to_json(const ImportanceReport& report);
ImportanceReport report_from_json(const nlohmann::json& j);
void save_report(const ImportanceReport& report, const std::filesystem::path& path);
ImportanceReport load_report(const std::filesystem::path& path);

/// Samples D_s, warms up a full adapter topology (plus head) on a disposable
/// copy of `model`, captures squared adapter-output norms over D_s and
/// normalizes per group. `model` itself is never modified.
/// When `capture_out` is given it receives the capture, with per-example norms.
ImportanceReport evaluate_importance(const model::TransformerModel& model, const data::Dataset& dataset,
                                     const SamplingConfig& sampling, const WarmupConfig& warmup,
                                     lora::CapturedOutputs* capture_out = nullptr);

struct Histogram {
    std::vector<double> bin_low;
    std::vector<double> bin_high;
    std::vector<std::size_t> counts;
};

/// Equal-width bins over [0, max per-example norm] for every captured site.
std::map<lora::AdapterSite, Histogram> norm_histogram(const lora::CapturedOutputs& captured, int bins);

/// CSV with columns site,bin_low,bin_high,count.
std::string histogram_csv(const std::map<lora::AdapterSite, Histogram>& histograms);

/// Spearman rank correlation; ties receive average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

/// Pairwise Spearman correlations of I per group; entry [i][j] compares reports i and j.
std::map<lora::MatrixKind, std::vector<std::vector<double>>> rank_stability(
    std::span<const ImportanceReport> reports);

}  // namespace loradrop::importance
