// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "loradrop/lora/adapter.hpp"
#include "loradrop/model/config.hpp"

namespace loradrop::lora {

/// The site has its own adapter.
struct Own {
    AdapterId id;
    bool operator==(const Own&) const = default;
};
/// The site uses the shared adapter of `group`.
struct Shared {
    MatrixKind group;
    bool operator==(const Shared&) const = default;
};
/// The site has no adapter (only legal under DropPolicy::remove).
struct Absent {
    bool operator==(const Absent&) const = default;
};

using SiteAssignment = std::variant<Own, Shared, Absent>;

/// What happens to dropped sites.
enum class DropPolicy {
    share,   // replaced by the group's shared adapter
    remove,  // left without any adapter
};

/// Assignment of every (layer, projection) site to an adapter, plus the
/// adapter store. Shared sites resolve to a single parameter set, so a training
/// step on the shared adapter is visible at every site that uses it.
///
/// Not copyable: copies would alias adapter tensors. Use clone().
class AdapterTopology {
public:
    explicit AdapterTopology(int num_layers, DropPolicy policy = DropPolicy::share);
    AdapterTopology(AdapterTopology&&) = default;
    AdapterTopology& operator=(AdapterTopology&&) = default;
    AdapterTopology(const AdapterTopology&) = delete;
    AdapterTopology& operator=(const AdapterTopology&) = delete;

    /// Own, freshly initialized adapter at every site. Each adapter draws from
    /// `rng.split(id)` with id "L<layer>.<kind>", so a site's initial values do
    /// not depend on which other sites exist.
    static AdapterTopology full(const model::ModelConfig& config, int rank, double scale, core::Rng& rng);

    void assign_own(const AdapterSite& site, LoRAAdapter adapter);
    void assign_shared(const AdapterSite& site);
    void assign_absent(const AdapterSite& site);
    void set_shared_adapter(MatrixKind group, LoRAAdapter adapter);

    int num_layers() const { return num_layers_; }
    DropPolicy policy() const { return policy_; }

    const SiteAssignment& assignment(const AdapterSite& site) const;
    /// Adapter serving `site`, or nullptr when the site is Absent.
    const LoRAAdapter* resolve(const AdapterSite& site) const;

    const std::map<AdapterSite, SiteAssignment>& assignments() const { return assignments_; }
    const std::map<MatrixKind, AdapterId>& shared_adapters() const { return shared_; }
    const std::map<AdapterId, LoRAAdapter>& adapters() const { return adapters_; }

    /// Sites of one group holding an assignment of type T.
    template <class T>
    std::vector<int> layers_with(MatrixKind kind) const {
        std::vector<int> out;
        for (const auto& [site, a] : assignments_)
            if (site.kind == kind && std::holds_alternative<T>(a)) out.push_back(site.layer);
        return out;
    }

    /// A and B of every distinct adapter, in adapter-id order.
    std::vector<core::Tensor> parameters() const;

    /// Checks every structural invariant; throws ValidationError.
    void validate() const;
    /// validate() plus adapter widths against the model; throws DimensionError.
    void validate_against(const model::ModelConfig& config) const;

    AdapterTopology clone() const;

    /// Same assignments and group table, bitwise-equal adapter tensors.
    bool equals(const AdapterTopology& other) const;

private:
    int num_layers_;
    DropPolicy policy_;
    std::map<AdapterSite, SiteAssignment> assignments_;
    std::map<MatrixKind, AdapterId> shared_;
    std::map<AdapterId, LoRAAdapter> adapters_;
};

/// Σ over distinct adapters of rank·(d_in + d_out); a shared adapter counts once.
long trainable_param_count(const AdapterTopology& topology, const model::ModelConfig& config);

/// Parameters of the classification head (weights plus bias).
long head_param_count(const model::ModelConfig& config);

/// Sites whose adapters contribute to a forward pass; all others contribute zero.
struct SiteMask {
    std::set<AdapterSite> enabled;

    bool contains(const AdapterSite& site) const { return enabled.count(site) > 0; }
};

inline constexpr int kTopologyFormatVersion = 1;

nlohmann::json topology_to_json(const AdapterTopology& topology);
AdapterTopology topology_from_json(const nlohmann::json& j);

void save_topology(const AdapterTopology& topology, const std::filesystem::path& path);
AdapterTopology load_topology(const std::filesystem::path& path);
/// load_topology() followed by validate_against(config).
AdapterTopology load_topology(const std::filesystem::path& path, const model::ModelConfig& config);

}  // namespace loradrop::lora
