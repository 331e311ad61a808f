// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/core/tape.hpp"

#include "loradrop/core/error.hpp"

namespace loradrop::core {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() noexcept { return g_active; }

void Tape::record(std::string_view op, std::function<void()> backward) {
    entries_.push_back(Entry{op, std::move(backward)});
}

void Tape::backward(Tensor loss) {
    if (loss.size() != 1) {
        throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ValidationError("backward() on a loss that was not produced through the tape");
    }
    loss.mutable_grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    entries_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

void backward(const Tensor& loss) {
    if (!g_active) throw ValidationError("backward() called with no active tape");
    g_active->backward(loss);
}

}  // namespace loradrop::core
