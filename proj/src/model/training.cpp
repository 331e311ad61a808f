// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/model/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "loradrop/core/error.hpp"
#include "loradrop/core/ops.hpp"
#include "loradrop/core/tape.hpp"

namespace loradrop::model {

namespace ops = core::ops;

TokenBatch make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices, std::vector<int>& labels) {
    if (indices.empty()) throw ValidationError("empty batch");
    TokenBatch batch;
    batch.batch = indices.size();
    batch.seq = dataset.examples.at(indices[0]).tokens.size();
    batch.ids.reserve(batch.batch * batch.seq);
    labels.clear();
    for (std::size_t i : indices) {
        const auto& ex = dataset.examples.at(i);
        if (ex.tokens.size() != batch.seq) throw DimensionError("ragged batch: example " + std::to_string(ex.id));
        batch.ids.insert(batch.ids.end(), ex.tokens.begin(), ex.tokens.end());
        labels.push_back(ex.label);
    }
    return batch;
}

EvalResult evaluate(const TransformerModel& model, const data::Dataset& dataset, const ForwardOptions& options,
                    std::size_t batch_size) {
    if (dataset.empty()) throw ValidationError("cannot evaluate on an empty dataset");
    core::NoGradScope no_grad;
    EvalResult r;
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        const std::size_t end = std::min(dataset.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        auto batch = make_batch(dataset, idx, labels);
        auto logits = forward(model, batch, options);
        loss_sum += ops::cross_entropy(logits, labels).item() * static_cast<double>(labels.size());
        const auto c = logits.cols();
        const auto v = logits.data();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto row = v.subspan(i * c, c);
            const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
            if (pred == labels[i]) ++correct;
        }
    }
    r.count = dataset.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    r.loss = loss_sum / static_cast<double>(r.count);
    return r;
}

EpochStats train_epoch(const TransformerModel& model, const ForwardOptions& options, const data::Dataset& train,
                       core::Adam& optimizer, std::size_t batch_size, core::Rng& rng, long max_steps) {
    if (train.empty()) throw ValidationError("cannot train on an empty dataset");
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());

    EpochStats stats;
    double loss_sum = 0.0;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        if (max_steps >= 0 && stats.steps >= max_steps) break;
        const std::size_t end = std::min(order.size(), start + batch_size);
        auto batch = make_batch(train, std::span(order).subspan(start, end - start), labels);

        optimizer.zero_grad();
        core::Tape tape;
        double loss_value = 0.0;
        try {
            core::TapeScope scope(tape);
            auto loss = ops::cross_entropy(forward(model, batch, options), labels);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
            tape.backward(loss);
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(stats.steps) + ": " + e.what());
        }
        for (const auto& p : optimizer.params()) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            for (double g : p.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient at step " + std::to_string(stats.steps));
                }
            }
        }
        optimizer.step();
        loss_sum += loss_value;
        ++stats.steps;
    }
    stats.mean_loss = stats.steps > 0 ? loss_sum / static_cast<double>(stats.steps) : 0.0;
    return stats;
}

}  // namespace loradrop::model
