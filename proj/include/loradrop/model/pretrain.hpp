// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "loradrop/core/rng.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::model {

struct PretrainOptions {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    /// Size of the generated generic-variant training set.
    int train_size = 8000;
};

struct PretrainReport {
    long steps = 0;
    /// Mean loss on the generic training set before and after training.
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Trains every parameter on the generic variant of `task` for `steps` Adam steps.
/// Requires an unfrozen model. 0 steps leaves the model untouched.
PretrainReport pretrain_base(TransformerModel& model, const data::TaskSpec& task, long steps, core::Rng& rng,
                             const PretrainOptions& options = {});

}  // namespace loradrop::model
