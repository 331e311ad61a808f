// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/lora/capture.hpp"

#include <algorithm>
#include <numeric>

#include "loradrop/core/error.hpp"
#include "loradrop/core/tape.hpp"
#include "loradrop/model/training.hpp"

namespace loradrop::lora {

double CapturedOutputs::total(const AdapterSite& site) const {
    auto it = sites.find(site);
    return it == sites.end() ? 0.0 : it->second.sum.value();
}

std::vector<double> CapturedOutputs::group_totals(MatrixKind kind, int num_layers) const {
    std::vector<double> g(static_cast<std::size_t>(num_layers), 0.0);
    for (int l = 0; l < num_layers; ++l) g[static_cast<std::size_t>(l)] = total({l, kind});
    return g;
}

void CapturedOutputs::merge(const CapturedOutputs& other) {
    if (per_example_recorded != other.per_example_recorded && !sites.empty() && !other.sites.empty()) {
        throw ValidationError("cannot merge captures with different per-example recording");
    }
    for (const auto& [site, c] : other.sites) {
        auto& mine = sites[site];
        mine.sum.merge(c.sum);
        mine.tokens += c.tokens;
        mine.per_example.insert(mine.per_example.end(), c.per_example.begin(), c.per_example.end());
    }
    per_example_recorded = per_example_recorded || other.per_example_recorded;
}

CapturedOutputs capture_squared_norms(const model::TransformerModel& model, const AdapterTopology& topology,
                                      const data::Dataset& dataset, const CaptureOptions& options) {
    if (dataset.empty()) throw ValidationError("empty importance subset");
    if (options.batch_size == 0) throw ValidationError("capture batch size must be positive");
    topology.validate_against(model.config());

    CapturedOutputs out;
    out.per_example_recorded = options.record_per_example;
    for (const auto& [site, a] : topology.assignments())
        if (topology.resolve(site)) out.sites[site];

    core::NoGradScope no_grad;
    std::size_t seq = 0;
    model::ForwardOptions fwd;
    fwd.adapters = &topology;
    fwd.on_adapter_output = [&](const AdapterSite& site, const core::Tensor& delta) {
        auto& c = out.sites.at(site);
        const auto d = delta.cols();
        const auto v = delta.data();
        const std::size_t rows = delta.rows();
        double example_sum = 0.0;
        for (std::size_t t = 0; t < rows; ++t) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) sq += v[t * d + j] * v[t * d + j];
            c.sum.add(sq);
            ++c.tokens;
            if (options.record_per_example) {
                example_sum += sq;
                if ((t + 1) % seq == 0) {
                    c.per_example.push_back(example_sum);
                    example_sum = 0.0;
                }
            }
        }
    };

    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t start = 0; start < dataset.size(); start += options.batch_size) {
        const std::size_t end = std::min(dataset.size(), start + options.batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        auto batch = model::make_batch(dataset, idx, labels);
        seq = batch.seq;
        model::forward(model, batch, fwd);
    }
    return out;
}

}  // namespace loradrop::lora
