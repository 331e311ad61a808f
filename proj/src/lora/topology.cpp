// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/lora/topology.hpp"

#include <algorithm>
#include <string>

#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"

namespace loradrop::lora {

using nlohmann::json;

AdapterTopology::AdapterTopology(int num_layers, DropPolicy policy) : num_layers_(num_layers), policy_(policy) {
    if (num_layers < 1) throw ValidationError("topology needs at least one layer");
    for (int l = 0; l < num_layers; ++l)
        for (auto kind : kMatrixKinds) assignments_[{l, kind}] = Absent{};
}

AdapterTopology AdapterTopology::full(const model::ModelConfig& config, int rank, double scale, core::Rng& rng) {
    AdapterTopology t(config.num_layers);
    for (int l = 0; l < config.num_layers; ++l) {
        for (auto kind : kMatrixKinds) {
            AdapterSite site{l, kind};
            const std::string id = "L" + site.key();
            auto site_rng = rng.split(id);
            t.assign_own(site, LoRAAdapter::create({id}, config.d_model, config.d_model, rank, scale, site_rng));
        }
    }
    return t;
}

namespace {

void check_site(const AdapterSite& site, int num_layers) {
    if (site.layer < 0 || site.layer >= num_layers) {
        throw ValidationError("site " + site.key() + " outside a " + std::to_string(num_layers) + "-layer model");
    }
}

}  // namespace

void AdapterTopology::assign_own(const AdapterSite& site, LoRAAdapter adapter) {
    check_site(site, num_layers_);
    if (adapters_.count(adapter.id)) throw ValidationError("duplicate adapter id " + adapter.id.value);
    if (auto* own = std::get_if<Own>(&assignments_[site])) adapters_.erase(own->id);
    assignments_[site] = Own{adapter.id};
    auto id = adapter.id;
    adapters_.emplace(std::move(id), std::move(adapter));
}

void AdapterTopology::assign_shared(const AdapterSite& site) {
    check_site(site, num_layers_);
    if (auto* own = std::get_if<Own>(&assignments_[site])) adapters_.erase(own->id);
    assignments_[site] = Shared{site.kind};
}

void AdapterTopology::assign_absent(const AdapterSite& site) {
    check_site(site, num_layers_);
    if (auto* own = std::get_if<Own>(&assignments_[site])) adapters_.erase(own->id);
    assignments_[site] = Absent{};
}

void AdapterTopology::set_shared_adapter(MatrixKind group, LoRAAdapter adapter) {
    if (adapters_.count(adapter.id)) throw ValidationError("duplicate adapter id " + adapter.id.value);
    if (auto it = shared_.find(group); it != shared_.end()) adapters_.erase(it->second);
    shared_[group] = adapter.id;
    auto id = adapter.id;
    adapters_.emplace(std::move(id), std::move(adapter));
}

const SiteAssignment& AdapterTopology::assignment(const AdapterSite& site) const {
    auto it = assignments_.find(site);
    if (it == assignments_.end()) throw ValidationError("no assignment for site " + site.key());
    return it->second;
}

const LoRAAdapter* AdapterTopology::resolve(const AdapterSite& site) const {
    const auto& a = assignment(site);
    if (auto* own = std::get_if<Own>(&a)) return &adapters_.at(own->id);
    if (auto* sh = std::get_if<Shared>(&a)) return &adapters_.at(shared_.at(sh->group));
    return nullptr;
}

std::vector<core::Tensor> AdapterTopology::parameters() const {
    std::vector<core::Tensor> out;
    for (const auto& [id, ad] : adapters_) {
        out.push_back(ad.a);
        out.push_back(ad.b);
    }
    return out;
}

void AdapterTopology::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("invalid topology: " + msg); };
    if (assignments_.size() != static_cast<std::size_t>(2 * num_layers_)) fail("expected one assignment per site");
    std::map<AdapterId, int> own_refs;
    std::map<MatrixKind, int> shared_refs;
    for (const auto& [site, a] : assignments_) {
        if (auto* own = std::get_if<Own>(&a)) {
            if (!adapters_.count(own->id)) fail("site " + site.key() + " references missing adapter " + own->id.value);
            ++own_refs[own->id];
        } else if (auto* sh = std::get_if<Shared>(&a)) {
            if (sh->group != site.kind) fail("site " + site.key() + " uses the " + std::string(to_string(sh->group)) + " group");
            auto it = shared_.find(sh->group);
            if (it == shared_.end() || !adapters_.count(it->second)) {
                fail("site " + site.key() + " references a missing shared adapter");
            }
            ++shared_refs[sh->group];
        } else if (policy_ != DropPolicy::remove) {
            fail("site " + site.key() + " is absent but dropped sites must be shared");
        }
    }
    for (const auto& [id, n] : own_refs) {
        if (n != 1) fail("adapter " + id.value + " owned by " + std::to_string(n) + " sites");
    }
    for (const auto& [group, id] : shared_) {
        if (own_refs.count(id)) fail("shared adapter " + id.value + " also owned by a site");
        if (!shared_refs.count(group)) fail("shared " + std::string(to_string(group)) + " adapter has no sites");
    }
    for (const auto& [id, ad] : adapters_) {
        const bool is_shared = std::any_of(shared_.begin(), shared_.end(), [&](auto& kv) { return kv.second == id; });
        if (!own_refs.count(id) && !is_shared) fail("adapter " + id.value + " is not referenced");
        ad.validate();
    }
}

void AdapterTopology::validate_against(const model::ModelConfig& config) const {
    validate();
    if (num_layers_ != config.num_layers) {
        throw DimensionError("topology covers " + std::to_string(num_layers_) + " layers, model has " +
                             std::to_string(config.num_layers));
    }
    for (const auto& [id, ad] : adapters_) {
        if (ad.d_in() != config.d_model || ad.d_out() != config.d_model) {
            throw DimensionError("adapter " + id.value + " maps " + std::to_string(ad.d_in()) + " -> " +
                                 std::to_string(ad.d_out()) + ", model width is " + std::to_string(config.d_model));
        }
    }
}

AdapterTopology AdapterTopology::clone() const {
    AdapterTopology c(num_layers_, policy_);
    c.assignments_ = assignments_;
    c.shared_ = shared_;
    for (const auto& [id, ad] : adapters_) c.adapters_.emplace(id, ad.clone());
    return c;
}

bool AdapterTopology::equals(const AdapterTopology& other) const {
    if (num_layers_ != other.num_layers_ || policy_ != other.policy_ || assignments_ != other.assignments_ ||
        shared_ != other.shared_ || adapters_.size() != other.adapters_.size()) {
        return false;
    }
    for (const auto& [id, ad] : adapters_) {
        auto it = other.adapters_.find(id);
        if (it == other.adapters_.end()) return false;
        const auto& o = it->second;
        if (ad.rank != o.rank || ad.scale != o.scale || !core::bitwise_equal(ad.a, o.a) ||
            !core::bitwise_equal(ad.b, o.b)) {
            return false;
        }
    }
    return true;
}

long trainable_param_count(const AdapterTopology& topology, const model::ModelConfig& config) {
    topology.validate_against(config);
    long total = 0;
    for (const auto& [id, ad] : topology.adapters()) total += static_cast<long>(ad.rank) * (config.d_model + config.d_model);
    return total;
}

long head_param_count(const model::ModelConfig& config) {
    return static_cast<long>(config.d_model) * config.num_classes + config.num_classes;
}

// ---------------------------------------------------------------------------
// Serialization

json topology_to_json(const AdapterTopology& topology) {
    json assignments = json::object();
    for (const auto& [site, a] : topology.assignments()) {
        if (auto* own = std::get_if<Own>(&a)) assignments[site.key()] = {{"own", own->id.value}};
        else if (auto* sh = std::get_if<Shared>(&a)) assignments[site.key()] = {{"shared", to_string(sh->group)}};
        else assignments[site.key()] = {{"absent", true}};
    }
    json groups = json::object();
    for (const auto& [group, id] : topology.shared_adapters()) groups[std::string(to_string(group))] = id.value;
    json adapters = json::object();
    for (const auto& [id, ad] : topology.adapters()) {
        auto a = ad.a.data();
        auto b = ad.b.data();
        adapters[id.value] = {{"rank", ad.rank},
                              {"scale", ad.scale},
                              {"d_in", ad.d_in()},
                              {"d_out", ad.d_out()},
                              {"A", std::vector<double>(a.begin(), a.end())},
                              {"B", std::vector<double>(b.begin(), b.end())}};
    }
    return json{{"format", "loradrop.topology"},
                {"version", kTopologyFormatVersion},
                {"num_layers", topology.num_layers()},
                {"policy", topology.policy() == DropPolicy::share ? "share" : "remove"},
                {"assignments", std::move(assignments)},
                {"groups", std::move(groups)},
                {"adapters", std::move(adapters)}};
}

namespace {

LoRAAdapter adapter_from_json(const std::string& id, const json& j) {
    LoRAAdapter ad;
    ad.id = {id};
    ad.rank = j.at("rank").get<int>();
    ad.scale = j.at("scale").get<double>();
    const auto d_in = j.at("d_in").get<std::size_t>();
    const auto d_out = j.at("d_out").get<std::size_t>();
    if (ad.rank < 1) throw ParseError("adapter " + id + ": rank must be positive");
    const auto r = static_cast<std::size_t>(ad.rank);
    auto a = j.at("A").get<std::vector<double>>();
    auto b = j.at("B").get<std::vector<double>>();
    if (a.size() != r * d_in || b.size() != d_out * r) {
        throw DimensionError("adapter " + id + ": factor sizes disagree with rank " + std::to_string(r) + " and widths " +
                             std::to_string(d_in) + "/" + std::to_string(d_out));
    }
    ad.a = core::Tensor::from_vector({r, d_in}, std::move(a), true);
    ad.b = core::Tensor::from_vector({d_out, r}, std::move(b), true);
    return ad;
}

}  // namespace

AdapterTopology topology_from_json(const json& j) {
    try {
        if (j.at("format") != "loradrop.topology") throw ParseError("not a topology file");
        const int version = j.at("version").get<int>();
        if (version != kTopologyFormatVersion) throw ParseError("unsupported topology version " + std::to_string(version));
        const auto policy_name = j.at("policy").get<std::string>();
        if (policy_name != "share" && policy_name != "remove") throw ParseError("unknown drop policy '" + policy_name + "'");
        AdapterTopology t(j.at("num_layers").get<int>(), policy_name == "share" ? DropPolicy::share : DropPolicy::remove);

        std::map<MatrixKind, std::string> groups;
        for (const auto& [name, id] : j.at("groups").items()) {
            MatrixKind kind;
            try {
                kind = matrix_kind_from_string(name);
            } catch (const ValidationError&) {
                throw ParseError("unknown group_kind '" + name + "'");
            }
            groups[kind] = id.get<std::string>();
        }
        const auto& adapters = j.at("adapters");
        for (const auto& [kind, id] : groups) t.set_shared_adapter(kind, adapter_from_json(id, adapters.at(id)));

        for (const auto& [key, a] : j.at("assignments").items()) {
            AdapterSite site;
            try {
                site = AdapterSite::parse(key);
            } catch (const ValidationError& e) {
                throw ParseError(e.what());
            }
            if (a.contains("own")) {
                const auto id = a.at("own").get<std::string>();
                t.assign_own(site, adapter_from_json(id, adapters.at(id)));
            } else if (a.contains("shared")) {
                const auto group = a.at("shared").get<std::string>();
                if (group != "query" && group != "value") throw ParseError("unknown group_kind '" + group + "'");
                if (matrix_kind_from_string(group) != site.kind) {
                    throw ParseError("site " + key + " assigned to the " + group + " group");
                }
                t.assign_shared(site);
            } else if (a.contains("absent")) {
                t.assign_absent(site);
            } else {
                throw ParseError("site " + key + " has no assignment kind");
            }
        }
        t.validate();
        return t;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed topology: ") + e.what());
    }
}

void save_topology(const AdapterTopology& topology, const std::filesystem::path& path) {
    topology.validate();
    core::write_file_atomic(path, topology_to_json(topology).dump());
}

AdapterTopology load_topology(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(core::read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return topology_from_json(j);
}

AdapterTopology load_topology(const std::filesystem::path& path, const model::ModelConfig& config) {
    auto t = load_topology(path);
    t.validate_against(config);
    return t;
}

}  // namespace loradrop::lora
