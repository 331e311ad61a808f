// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/adapt/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "loradrop/core/error.hpp"
#include "loradrop/core/exact_sum.hpp"

namespace loradrop::adapt {

using lora::AdapterSite;
using lora::MatrixKind;

std::vector<int> importance_order(std::span<const double> importance) {
    std::vector<int> order(importance.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return importance[static_cast<std::size_t>(a)] > importance[static_cast<std::size_t>(b)];
    });
    return order;
}

GroupPlan select_group(std::span<const double> importance, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw ValidationError("threshold must lie in (0, 1], got " + std::to_string(threshold));
    }
    if (importance.empty()) throw ValidationError("empty importance vector");
    core::ExactSum total;
    for (double v : importance) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("importance values must lie in [0, 1]");
        total.add(v);
    }
    if (std::fabs(total.value() - 1.0) > 1e-9) {
        throw ValidationError("importance vector is not normalized (sum " + std::to_string(total.value()) + ")");
    }

    const auto order = importance_order(importance);
    GroupPlan plan;
    double cum = 0.0;
    std::size_t take = order.size();
    if (threshold < 1.0) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            cum += importance[static_cast<std::size_t>(order[i])];
            if (cum >= threshold) {
                take = i + 1;
                break;
            }
        }
    }
    cum = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
        plan.retained.push_back(order[i]);
        cum += importance[static_cast<std::size_t>(order[i])];
    }
    plan.cumulative = cum;
    plan.dropped.assign(order.begin() + static_cast<std::ptrdiff_t>(take), order.end());
    std::sort(plan.dropped.begin(), plan.dropped.end());
    return plan;
}

RetentionPlan select_retained(const importance::ImportanceReport& report, double threshold) {
    RetentionPlan plan;
    plan.threshold = threshold;
    plan.num_layers = report.num_layers();
    for (auto kind : lora::kMatrixKinds) plan.groups[kind] = select_group(report.importance(kind), threshold);
    return plan;
}

nlohmann::json plan_to_json(const RetentionPlan& plan) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [kind, g] : plan.groups) {
        groups[std::string(lora::to_string(kind))] = {
            {"retained", g.retained}, {"dropped", g.dropped}, {"cumulative", g.cumulative}, {"k", g.k()}};
    }
    return {{"threshold", plan.threshold}, {"num_layers", plan.num_layers}, {"groups", std::move(groups)}};
}

RetentionPlan plan_from_json(const nlohmann::json& j) {
    try {
        RetentionPlan plan;
        plan.threshold = j.at("threshold").get<double>();
        plan.num_layers = j.at("num_layers").get<int>();
        for (const auto& [name, gj] : j.at("groups").items()) {
            GroupPlan g;
            g.retained = gj.at("retained").get<std::vector<int>>();
            g.dropped = gj.at("dropped").get<std::vector<int>>();
            g.cumulative = gj.at("cumulative").get<double>();
            std::set<int> all(g.retained.begin(), g.retained.end());
            all.insert(g.dropped.begin(), g.dropped.end());
            if (static_cast<int>(all.size()) != plan.num_layers ||
                static_cast<int>(g.retained.size() + g.dropped.size()) != plan.num_layers ||
                (!all.empty() && (*all.begin() < 0 || *all.rbegin() >= plan.num_layers))) {
                throw ParseError("plan group '" + name + "' does not partition the layers");
            }
            plan.groups[lora::matrix_kind_from_string(name)] = std::move(g);
        }
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed retention plan: ") + e.what());
    }
}

std::string_view to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::lora_drop: return "lora_drop";
        case AblationKind::without_share: return "without_share";
        case AblationKind::inverse: return "inverse";
        case AblationKind::random_k: return "random_k";
        case AblationKind::top_k: return "top_k";
        case AblationKind::full_lora: return "full_lora";
        case AblationKind::infer_keep_large: return "infer_keep_large";
        case AblationKind::infer_keep_small: return "infer_keep_small";
    }
    return "?";
}

AblationKind ablation_from_string(std::string_view name) {
    for (auto k : kAllAblations)
        if (to_string(k) == name) return k;
    throw ValidationError("unknown ablation '" + std::string(name) + "'");
}

std::vector<int> own_layers(const RetentionPlan& plan, AblationKind kind, MatrixKind group,
                            const BuildOptions& options) {
    const int L = plan.num_layers;
    const auto& g = plan.group(group);
    int k = static_cast<int>(g.k());
    if (auto it = options.k.find(group); it != options.k.end()) k = it->second;
    if (k < 0 || k > L) {
        throw ValidationError("k = " + std::to_string(k) + " outside [0, " + std::to_string(L) + "]");
    }
    std::vector<int> all(static_cast<std::size_t>(L));
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> own;
    switch (kind) {
        case AblationKind::lora_drop:
        case AblationKind::without_share: own = g.retained; break;
        case AblationKind::inverse: own = g.dropped; break;
        case AblationKind::random_k: {
            if (!options.selection) throw ValidationError("random_k requires a selection rng");
            auto rng = options.selection->split(lora::to_string(group));
            rng.shuffle(all.begin(), all.end());
            own.assign(all.begin(), all.begin() + k);
            break;
        }
        case AblationKind::top_k: own.assign(all.end() - k, all.end()); break;
        case AblationKind::full_lora:
        case AblationKind::infer_keep_large:
        case AblationKind::infer_keep_small: own = all; break;
    }
    std::sort(own.begin(), own.end());
    return own;
}

lora::AdapterTopology build_topology(const RetentionPlan& plan, AblationKind kind, const BuildOptions& options) {
    options.config.validate();
    if (plan.num_layers != options.config.num_layers) {
        throw DimensionError("plan covers " + std::to_string(plan.num_layers) + " layers, model has " +
                             std::to_string(options.config.num_layers));
    }
    const auto policy = kind == AblationKind::without_share ? lora::DropPolicy::remove : lora::DropPolicy::share;
    lora::AdapterTopology topo(plan.num_layers, policy);
    const int d = options.config.d_model;
    for (auto group : lora::kMatrixKinds) {
        const auto own = own_layers(plan, kind, group, options);
        const std::set<int> own_set(own.begin(), own.end());
        bool any_shared = false;
        for (int l = 0; l < plan.num_layers; ++l) {
            const AdapterSite site{l, group};
            if (own_set.count(l)) {
                const std::string id = "L" + site.key();
                auto rng = options.init.split(id);
                topo.assign_own(site, lora::LoRAAdapter::create({id}, d, d, options.rank, options.scale, rng));
            } else if (policy == lora::DropPolicy::remove) {
                topo.assign_absent(site);
            } else {
                any_shared = true;
            }
        }
        if (!any_shared) continue;
        const std::string id = "shared." + std::string(lora::to_string(group));
        auto rng = options.init.split(id);
        topo.set_shared_adapter(group, lora::LoRAAdapter::create({id}, d, d, options.rank, options.scale, rng));
        for (int l = 0; l < plan.num_layers; ++l)
            if (!own_set.count(l)) topo.assign_shared({l, group});
    }
    topo.validate_against(options.config);
    return topo;
}

lora::SiteMask inference_mask(const lora::AdapterTopology& full, const importance::ImportanceReport& report, Keep keep,
                              const RetentionPlan& companion) {
    const int L = full.num_layers();
    if (report.num_layers() != L || companion.num_layers != L) {
        throw DimensionError("inference mask: report, plan and topology disagree on layer count");
    }
    for (const auto& [site, a] : full.assignments()) {
        if (!std::holds_alternative<lora::Own>(a)) {
            throw ValidationError("inference mask needs a full topology; site " + site.key() + " is not Own");
        }
    }
    lora::SiteMask mask;
    for (auto group : lora::kMatrixKinds) {
        auto order = importance_order(report.importance(group));
        const auto k = companion.group(group).k();
        if (keep == Keep::small) std::reverse(order.begin(), order.end());
        for (std::size_t i = 0; i < k; ++i) mask.enabled.insert({order[i], group});
    }
    return mask;
}

}  // namespace loradrop::adapt
