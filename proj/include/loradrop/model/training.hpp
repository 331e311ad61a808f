// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "loradrop/core/optim.hpp"
#include "loradrop/core/rng.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::model {

/// Stacks the selected examples into one batch; `labels` receives their labels.
TokenBatch make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices, std::vector<int>& labels);

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t count = 0;
};

/// Accuracy and mean cross-entropy over the whole dataset, without recording gradients.
EvalResult evaluate(const TransformerModel& model, const data::Dataset& dataset, const ForwardOptions& options = {},
                    std::size_t batch_size = 256);

struct EpochStats {
    double mean_loss = 0.0;
    long steps = 0;
};

/// One shuffled pass over `train` (or fewer steps when `max_steps` >= 0).
/// Every parameter held by `optimizer` must receive a gradient.
/// Throws NumericError when the loss or any gradient is non-finite.
EpochStats train_epoch(const TransformerModel& model, const ForwardOptions& options, const data::Dataset& train,
                       core::Adam& optimizer, std::size_t batch_size, core::Rng& rng, long max_steps = -1);

}  // namespace loradrop::model
