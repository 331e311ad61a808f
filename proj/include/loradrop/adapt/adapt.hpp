// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loradrop/core/rng.hpp"
#include "loradrop/importance/importance.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/config.hpp"

namespace loradrop::adapt {

struct GroupPlan {
    /// Retained layers in selection order (descending I, lower index first on ties).
    std::vector<int> retained;
    /// Dropped layers in ascending order.
    std::vector<int> dropped;
    double cumulative = 0.0;

    std::size_t k() const { return retained.size(); }
};

struct RetentionPlan {
    double threshold = 1.0;
    int num_layers = 0;
    std::map<lora::MatrixKind, GroupPlan> groups;

    const GroupPlan& group(lora::MatrixKind kind) const { return groups.at(kind); }
};

/// Layers sorted by I descending; equal values keep the lower index first.
std::vector<int> importance_order(std::span<const double> importance);

/// Shortest prefix of importance_order() whose running sum reaches T (>=).
/// T = 1 retains every layer. Throws unless Σ I = 1 ± 1e-9, every I in [0,1]
/// and T in (0,1].
GroupPlan select_group(std::span<const double> importance, double threshold);
RetentionPlan select_retained(const importance::ImportanceReport& report, double threshold);

nlohmann::json plan_to_json(const RetentionPlan& plan);
RetentionPlan plan_from_json(const nlohmann::json& j);

enum class AblationKind {
    lora_drop,
    without_share,
    inverse,
    random_k,
    top_k,
    full_lora,
    infer_keep_large,
    infer_keep_small,
};

inline constexpr AblationKind kAllAblations[] = {
    AblationKind::lora_drop,  AblationKind::without_share, AblationKind::inverse,          AblationKind::random_k,
    AblationKind::top_k,      AblationKind::full_lora,     AblationKind::infer_keep_large, AblationKind::infer_keep_small,
};

std::string_view to_string(AblationKind kind);
AblationKind ablation_from_string(std::string_view name);

struct BuildOptions {
    model::ModelConfig config;
    int rank = 8;
    double scale = 1.0;
    /// Adapter initialization; each adapter draws from `init.split(id)`.
    core::Rng init{0};
    /// Layer choice for random_k, drawn per group from `selection->split(kind)`.
    std::optional<core::Rng> selection;
    /// Retained count per group; defaults to the plan's.
    std::map<lora::MatrixKind, int> k;
};

/// Layers that keep their own adapter under `kind`, ascending.
std::vector<int> own_layers(const RetentionPlan& plan, AblationKind kind, lora::MatrixKind group,
                            const BuildOptions& options);

/// Topology for an ablation. Own adapters match AdapterTopology::full() site by
/// site for the same `init`; dropped sites share one fresh adapter per group
/// ("shared.query", "shared.value"), or have none under without_share.
/// infer_keep_* build the full topology; use inference_mask() for the view.
lora::AdapterTopology build_topology(const RetentionPlan& plan, AblationKind kind, const BuildOptions& options);

enum class Keep { large, small };

/// Forward-only view of a trained full topology keeping, per group, the
/// companion plan's retained count of largest (or smallest) I adapters.
lora::SiteMask inference_mask(const lora::AdapterTopology& full, const importance::ImportanceReport& report, Keep keep,
                              const RetentionPlan& companion);

}  // namespace loradrop::adapt
