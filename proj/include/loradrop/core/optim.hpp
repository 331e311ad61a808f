// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loradrop/core/tensor.hpp"

namespace loradrop::core {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Decoupled (AdamW-style) decay; 0 disables it.
    double weight_decay = 0.0;
};

/// Moment buffers for a fixed, ordered list of parameters.
struct OptimizerState {
    AdamOptions options;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/// One Adam update over `params`; lazily sizes the moment buffers on the first call.
/// Parameters without requires_grad are skipped. Throws if a trainable parameter has no gradient.
void adam_step(std::span<Tensor> params, OptimizerState& state);

/// p -= lr * grad for every trainable parameter.
void sgd_step(std::span<Tensor> params, double learning_rate);

void zero_grads(std::span<Tensor> params);

/// Owns a parameter list together with its Adam state.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options);

    void step() { adam_step(params_, state_); }
    void zero_grad() { zero_grads(params_); }

    const OptimizerState& state() const { return state_; }
    std::span<Tensor> params() { return params_; }

private:
    std::vector<Tensor> params_;
    OptimizerState state_;
};

}  // namespace loradrop::core
