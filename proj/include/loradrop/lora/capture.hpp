// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "loradrop/core/exact_sum.hpp"
#include "loradrop/data/task.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/transformer.hpp"

namespace loradrop::lora {

struct SiteCapture {
    /// Σ over tokens of ‖ΔW x‖².
    core::ExactSum sum;
    std::uint64_t tokens = 0;
    /// Per-example Σ over that example's tokens, in dataset order. Only filled when recording.
    std::vector<double> per_example;
};

struct CapturedOutputs {
    std::map<AdapterSite, SiteCapture> sites;
    bool per_example_recorded = false;

    double total(const AdapterSite& site) const;
    /// Totals of one group, indexed by layer (0 for sites without an adapter).
    std::vector<double> group_totals(MatrixKind kind, int num_layers) const;
    /// Adds another capture over disjoint data; per-example lists are appended.
    void merge(const CapturedOutputs& other);
};

struct CaptureOptions {
    bool record_per_example = false;
    std::size_t batch_size = 128;
};

/// Gradient-free pass over `dataset` in dataset order, then sequence order.
/// Throws ValidationError("empty importance subset") on an empty dataset.
CapturedOutputs capture_squared_norms(const model::TransformerModel& model, const AdapterTopology& topology,
                                      const data::Dataset& dataset, const CaptureOptions& options = {});

}  // namespace loradrop::lora
