// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/model/pretrain.hpp"

#include "loradrop/core/error.hpp"
#include "loradrop/core/optim.hpp"
#include "loradrop/model/training.hpp"

namespace loradrop::model {

PretrainReport pretrain_base(TransformerModel& model, const data::TaskSpec& task, long steps, core::Rng& rng,
                             const PretrainOptions& options) {
    if (steps < 0) throw ValidationError("pretrain steps must be non-negative");
    if (model.base_frozen()) throw ValidationError("pretrain_base requires an unfrozen model");
    PretrainReport report;
    if (steps == 0) return report;

    auto spec = task.generic_variant();
    spec.seed = rng.split("pretrain-data").next_u64();
    spec.train_size = options.train_size;
    spec.dev_size = 0;
    const auto [train, unused_dev] = data::generate(spec);
    const auto& config = model.config();
    data::validate_for_model(train, config.vocab_size, config.max_seq_len, config.num_classes);

    report.initial_loss = evaluate(model, train).loss;
    std::vector<core::Tensor> params;
    for (const auto& [name, t] : model.named_parameters())
        if (t.requires_grad()) params.push_back(t);
    core::AdamOptions adam;
    adam.learning_rate = options.learning_rate;
    core::Adam optimizer(std::move(params), adam);
    auto order_rng = rng.split("pretrain-order");
    while (report.steps < steps) {
        report.steps +=
            train_epoch(model, {}, train, optimizer, options.batch_size, order_rng, steps - report.steps).steps;
    }
    report.final_loss = evaluate(model, train).loss;
    return report;
}

}  // namespace loradrop::model
