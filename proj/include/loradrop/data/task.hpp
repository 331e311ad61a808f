// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace loradrop::data {

/// Synthetic sequence-classification families, ordered by how much
/// cross-position computation the label needs.
enum class TaskFamily {
    token_count,        // label = class holding the most tokens
    pairwise_order,     // label bits = relative order of marker pairs
    nested_dependency,  // label = maximum bracket nesting depth - 1
};

std::string_view to_string(TaskFamily family);
TaskFamily task_family_from_string(std::string_view name);

struct TaskSpec {
    TaskFamily family = TaskFamily::token_count;
    int vocab_size = 16;
    int seq_len = 16;
    int num_classes = 4;
    /// Relative class weights; empty means uniform.
    std::vector<double> class_balance;
    std::uint64_t seed = 0;
    int train_size = 2000;
    int dev_size = 500;
    /// 0 is the task itself; 1 is the generic variant used for base pretraining,
    /// which keeps the family rule but assigns different tokens to each role.
    int variant = 0;

    /// Throws ValidationError when the family cannot be realized with these extents.
    void validate() const;
    /// Copy with variant = 1.
    TaskSpec generic_variant() const;
    std::vector<double> normalized_balance() const;

    bool operator==(const TaskSpec&) const = default;
};

struct Example {
    int id = 0;
    std::vector<int> tokens;
    int label = 0;

    bool operator==(const Example&) const = default;
};

struct Dataset {
    TaskSpec spec;
    std::string split;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    /// Subset in the order given by `ids` (indices into `examples`).
    Dataset subset(std::span<const std::size_t> indices, std::string split_name) const;
    std::vector<std::size_t> class_counts() const;
};

/// Labels `tokens` by the family rule of `spec`. This is the rule the generator
/// uses, and re-applying it to stored examples must reproduce their labels.
int label_for(const TaskSpec& spec, std::span<const int> tokens);

/// Class assigned to a token by the token-count rule.
int token_class(const TaskSpec& spec, int token);

/// Deterministic train/dev pair; no dev token sequence also appears in train.
std::pair<Dataset, Dataset> generate(const TaskSpec& spec);

/// Throws ValidationError if any example does not fit the given model extents.
/// FNV-1a over every example's id, tokens and label, as 16 hex digits.
std::string fingerprint(const Dataset& dataset);

void validate_for_model(const Dataset& dataset, int vocab_size, int max_seq_len, int num_classes);

}  // namespace loradrop::data
