// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/importance/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "loradrop/core/error.hpp"
#include "loradrop/core/exact_sum.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/core/optim.hpp"
#include "loradrop/model/training.hpp"

namespace loradrop::importance {

using lora::MatrixKind;

void SamplingConfig::validate() const {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ValidationError("sampling ratio must lie in (0, 1), got " + std::to_string(ratio));
    }
}

void WarmupConfig::validate() const {
    if (epochs < 1) throw ValidationError("warm-up epochs must be >= 1");
    if (max_steps && *max_steps < 0) throw ValidationError("warm-up step cap must be non-negative");
    if (batch_size == 0) throw ValidationError("warm-up batch size must be positive");
    if (!(learning_rate >= 0.0)) throw ValidationError("warm-up learning rate must be non-negative");
}

data::Dataset stratified_sample(const data::Dataset& dataset, const SamplingConfig& config) {
    config.validate();
    if (dataset.empty()) throw ValidationError("cannot sample from an empty dataset");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.examples[i].label].push_back(i);

    core::Rng rng(config.seed);
    std::vector<std::size_t> chosen;
    for (auto& [label, members] : by_class) {
        const double want = config.ratio * static_cast<double>(members.size());
        auto take = static_cast<std::size_t>(std::floor(want + 0.5));
        take = std::clamp<std::size_t>(take, 1, members.size());
        rng.shuffle(members.begin(), members.end());
        chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(chosen.begin(), chosen.end());
    return dataset.subset(chosen, "importance");
}

std::vector<double> normalize(std::span<const double> g) {
    if (g.empty()) throw ValidationError("cannot normalize an empty importance vector");
    core::ExactSum total;
    for (double v : g) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("importance scores must be finite and >= 0");
        total.add(v);
    }
    const double sum = total.value();
    if (sum == 0.0) throw NumericError("degenerate importance: all-zero group");
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] / sum;
    return out;
}

int ImportanceReport::num_layers() const {
    return groups.empty() ? 0 : static_cast<int>(groups.begin()->second.importance.size());
}

nlohmann::json report_to_json(const ImportanceReport& r) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [kind, gi] : r.groups) groups[std::string(to_string(kind))] = {{"g", gi.g}, {"I", gi.importance}};
    nlohmann::json warm = {{"epochs", r.warmup.epochs},
                           {"learning_rate", r.warmup.learning_rate},
                           {"batch_size", r.warmup.batch_size},
                           {"rank", r.warmup.rank},
                           {"scale", r.warmup.scale},
                           {"seed", r.warmup.seed},
                           {"steps", r.warmup_steps}};
    warm["max_steps"] = r.warmup.max_steps ? nlohmann::json(*r.warmup.max_steps) : nlohmann::json(nullptr);
    return {{"format", "loradrop.importance"},
            {"version", kImportanceFormatVersion},
            {"groups", std::move(groups)},
            {"metadata",
             {{"alpha", r.sampling.ratio},
              {"sampling_seed", r.sampling.seed},
              {"warmup", std::move(warm)},
              {"dataset_fingerprint", r.dataset_fingerprint},
              {"sample_ids", r.sample_ids}}}};
}

ImportanceReport report_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "loradrop.importance") throw ParseError("not an importance report");
        const int version = j.at("version").get<int>();
        if (version != kImportanceFormatVersion) {
            throw ParseError("unsupported importance report version " + std::to_string(version));
        }
        ImportanceReport r;
        for (const auto& [name, gj] : j.at("groups").items()) {
            GroupImportance gi{gj.at("g").get<std::vector<double>>(), gj.at("I").get<std::vector<double>>()};
            if (gi.g.size() != gi.importance.size()) throw ParseError("group '" + name + "' has mismatched g and I");
            r.groups[lora::matrix_kind_from_string(name)] = std::move(gi);
        }
        const auto& meta = j.at("metadata");
        r.sampling.ratio = meta.at("alpha").get<double>();
        r.sampling.seed = meta.at("sampling_seed").get<std::uint64_t>();
        const auto& warm = meta.at("warmup");
        r.warmup.epochs = warm.at("epochs").get<int>();
        r.warmup.learning_rate = warm.at("learning_rate").get<double>();
        r.warmup.batch_size = warm.at("batch_size").get<std::size_t>();
        r.warmup.rank = warm.at("rank").get<int>();
        r.warmup.scale = warm.at("scale").get<double>();
        r.warmup.seed = warm.at("seed").get<std::uint64_t>();
        if (!warm.at("max_steps").is_null()) r.warmup.max_steps = warm.at("max_steps").get<long>();
        r.warmup_steps = warm.at("steps").get<long>();
        r.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
        r.sample_ids = meta.at("sample_ids").get<std::vector<int>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed importance report: ") + e.what());
    } catch (const ValidationError& e) {
        throw ParseError(std::string("malformed importance report: ") + e.what());
    }
}

void save_report(const ImportanceReport& report, const std::filesystem::path& path) {
    core::write_file_atomic(path, report_to_json(report).dump(2) + "\n");
}

ImportanceReport load_report(const std::filesystem::path& path) {
    try {
        return report_from_json(nlohmann::json::parse(core::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

ImportanceReport evaluate_importance(const model::TransformerModel& model, const data::Dataset& dataset,
                                     const SamplingConfig& sampling, const WarmupConfig& warmup,
                                     lora::CapturedOutputs* capture_out) {
    sampling.validate();
    warmup.validate();
    const auto& config = model.config();
    const auto subset = stratified_sample(dataset, sampling);

    auto work = model.clone();
    work.freeze_base();
    work.set_head_trainable(true);
    core::Rng rng(warmup.seed);
    auto adapter_rng = rng.split("adapters");
    auto topology = lora::AdapterTopology::full(config, warmup.rank, warmup.scale, adapter_rng);

    std::vector<core::Tensor> params = topology.parameters();
    for (const auto& t : work.head_parameters()) params.push_back(t);
    core::AdamOptions adam;
    adam.learning_rate = warmup.learning_rate;
    core::Adam optimizer(std::move(params), adam);

    model::ForwardOptions fwd;
    fwd.adapters = &topology;
    auto order_rng = rng.split("order");
    long steps = 0;
    for (int e = 0; e < warmup.epochs; ++e) {
        const long remaining = warmup.max_steps ? *warmup.max_steps - steps : -1;
        if (remaining == 0) break;
        steps += model::train_epoch(work, fwd, subset, optimizer, warmup.batch_size, order_rng, remaining).steps;
    }

    lora::CaptureOptions copt;
    copt.record_per_example = capture_out != nullptr;
    auto captured = lora::capture_squared_norms(work, topology, subset, copt);

    ImportanceReport report;
    report.sampling = sampling;
    report.warmup = warmup;
    report.warmup_steps = steps;
    report.dataset_fingerprint = data::fingerprint(dataset);
    for (const auto& ex : subset.examples) report.sample_ids.push_back(ex.id);
    for (auto kind : lora::kMatrixKinds) {
        GroupImportance gi;
        gi.g = captured.group_totals(kind, config.num_layers);
        gi.importance = normalize(gi.g);
        report.groups[kind] = std::move(gi);
    }
    if (capture_out) *capture_out = std::move(captured);
    return report;
}

std::map<lora::AdapterSite, Histogram> norm_histogram(const lora::CapturedOutputs& captured, int bins) {
    if (bins < 1) throw ValidationError("histogram needs at least one bin");
    if (!captured.per_example_recorded) {
        throw ValidationError("capture ran without per-example recording; histogram unavailable");
    }
    std::map<lora::AdapterSite, Histogram> out;
    const auto nb = static_cast<std::size_t>(bins);
    for (const auto& [site, c] : captured.sites) {
        double hi = 0.0;
        for (double v : c.per_example) hi = std::max(hi, v);
        const double width = hi > 0.0 ? hi / static_cast<double>(bins) : 0.0;
        Histogram h;
        h.counts.assign(nb, 0);
        for (std::size_t b = 0; b < nb; ++b) {
            h.bin_low.push_back(width * static_cast<double>(b));
            h.bin_high.push_back(b + 1 == nb ? hi : width * static_cast<double>(b + 1));
        }
        for (double v : c.per_example) {
            std::size_t b = width > 0.0 ? static_cast<std::size_t>(v / width) : 0;
            ++h.counts[std::min(b, nb - 1)];
        }
        out.emplace(site, std::move(h));
    }
    return out;
}

std::string histogram_csv(const std::map<lora::AdapterSite, Histogram>& histograms) {
    std::ostringstream os;
    os.precision(17);
    os << "site,bin_low,bin_high,count\n";
    for (const auto& [site, h] : histograms)
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            os << site.key() << ',' << h.bin_low[b] << ',' << h.bin_high[b] << ',' << h.counts[b] << '\n';
    return os.str();
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("spearman: vectors differ in length");
    if (a.size() < 2) throw ValidationError("spearman needs at least two observations");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - mean) * (rb[i] - mean);
        saa += (ra[i] - mean) * (ra[i] - mean);
        sbb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (saa == 0.0 || sbb == 0.0) throw NumericError("spearman undefined for a constant vector");
    return sab / std::sqrt(saa * sbb);
}

std::map<MatrixKind, std::vector<std::vector<double>>> rank_stability(std::span<const ImportanceReport> reports) {
    if (reports.size() < 2) throw ValidationError("rank_stability needs at least two reports");
    std::map<MatrixKind, std::vector<std::vector<double>>> out;
    for (auto kind : lora::kMatrixKinds) {
        auto& m = out[kind];
        m.assign(reports.size(), std::vector<double>(reports.size(), 1.0));
        for (std::size_t i = 0; i < reports.size(); ++i) {
            for (std::size_t j = i + 1; j < reports.size(); ++j) {
                const auto& a = reports[i].importance(kind);
                const auto& b = reports[j].importance(kind);
                if (a.size() != b.size()) throw DimensionError("rank_stability: reports differ in layer count");
                m[i][j] = m[j][i] = spearman(a, b);
            }
        }
    }
    return out;
}

}  // namespace loradrop::importance
