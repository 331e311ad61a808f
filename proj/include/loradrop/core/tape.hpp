// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "loradrop/core/tensor.hpp"

namespace loradrop::core {

/// Ordered record of the differentiable ops executed since the last replay.
///
/// Ops append an entry only while a tape is active on the current thread
/// (see TapeScope) and at least one input requires a gradient. Entries are
/// appended after their inputs exist, so reverse iteration is a valid
/// reverse topological order. The tape is rebuilt on every forward pass.
class Tape {
public:
    struct Entry {
        std::string_view op;
        std::function<void()> backward;
    };

    void record(std::string_view op, std::function<void()> backward);

    /// Seeds d(loss)/d(loss) = 1, replays every entry in reverse and clears the tape.
    /// Gradients accumulate into existing buffers.
    void backward(Tensor loss);

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
};

/// Makes `tape` the active recording target for this thread until destruction.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording on this thread until destruction.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

/// Tape currently recording on this thread, or nullptr.
Tape* active_tape() noexcept;

/// Replays the active tape from `loss`. Throws if no tape is active or the loss is not a scalar.
void backward(const Tensor& loss);

}  // namespace loradrop::core
