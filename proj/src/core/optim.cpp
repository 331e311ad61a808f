// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/core/optim.hpp"

#include <cmath>
#include <string>

#include "loradrop/core/error.hpp"

namespace loradrop::core {

namespace {

void require_grad_present(const Tensor& p, std::size_t index) {
    if (!p.has_grad()) {
        throw ValidationError("optimizer: trainable parameter #" + std::to_string(index) + " " +
                              shape_str(p.shape()) + " has no gradient");
    }
}

}  // namespace

void adam_step(std::span<Tensor> params, OptimizerState& state) {
    if (state.first_moment.empty()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(params[i].size(), 0.0);
            state.second_moment[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                             " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].size()) {
            throw DimensionError("adam_step: moment buffer misaligned with parameter " + shape_str(params[i].shape()));
        }
        if (params[i].requires_grad()) require_grad_present(params[i], i);
    }

    ++state.step;
    const auto& o = state.options;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(o.beta1, t);
    const double bias2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.requires_grad()) continue;
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
            v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
            const double mhat = m[j] / bias1;
            const double vhat = v[j] / bias2;
            double update = o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
            if (o.weight_decay != 0.0) update += o.learning_rate * o.weight_decay * w[j];
            w[j] -= update;
        }
    }
}

void sgd_step(std::span<Tensor> params, double learning_rate) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].requires_grad()) require_grad_present(params[i], i);
    }
    for (auto& p : params) {
        if (!p.requires_grad()) continue;
        auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= learning_rate * g[j];
    }
}

void zero_grads(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)) {
    state_.options = options;
}

}  // namespace loradrop::core
