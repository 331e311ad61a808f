// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "loradrop/core/rng.hpp"
#include "loradrop/core/tensor.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/config.hpp"

namespace loradrop::model {

/// Row-major `[batch x seq]` token ids.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;
};

struct LayerWeights {
    core::Tensor ln1_gamma, ln1_beta;
    core::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    core::Tensor ln2_gamma, ln2_beta;
    core::Tensor w_up, b_up, w_down, b_down;
};

using NamedTensor = std::pair<std::string, core::Tensor>;

/// Pre-norm transformer encoder with a mean-pooled classification head.
///
/// Base parameters are the embeddings, every layer weight and the final
/// norm; the head (`head.w`, `head.b`) is tracked separately because it stays
/// trainable during adapter fine-tuning.
class TransformerModel {
public:
    static TransformerModel init(const ModelConfig& config, core::Rng& rng);

    TransformerModel(TransformerModel&&) = default;
    TransformerModel& operator=(TransformerModel&&) = default;
    TransformerModel(const TransformerModel&) = delete;
    TransformerModel& operator=(const TransformerModel&) = delete;

    const ModelConfig& config() const { return config_; }

    /// Base parameters in a fixed order with stable names.
    std::vector<NamedTensor> named_base_parameters() const;
    std::vector<NamedTensor> named_head_parameters() const;
    /// Base followed by head.
    std::vector<NamedTensor> named_parameters() const;
    std::vector<core::Tensor> base_parameters() const;
    std::vector<core::Tensor> head_parameters() const;

    /// Clears requires_grad on every base parameter. Idempotent.
    void freeze_base();
    bool base_frozen() const;
    void set_head_trainable(bool trainable);
    /// Fresh classifier head for a new task; keeps the head's requires_grad flags.
    void reset_head(core::Rng& rng);
    /// Number of head parameters that currently require gradients.
    long trainable_head_count() const;

    const std::vector<LayerWeights>& layers() const { return layers_; }
    std::vector<LayerWeights>& layers() { return layers_; }
    core::Tensor& token_embedding() { return tok_emb_; }
    core::Tensor& position_embedding() { return pos_emb_; }
    core::Tensor& head_weight() { return head_w_; }
    core::Tensor& head_bias() { return head_b_; }
    const core::Tensor& token_embedding() const { return tok_emb_; }
    const core::Tensor& position_embedding() const { return pos_emb_; }
    const core::Tensor& final_norm_gamma() const { return final_gamma_; }
    const core::Tensor& final_norm_beta() const { return final_beta_; }
    const core::Tensor& head_weight() const { return head_w_; }
    const core::Tensor& head_bias() const { return head_b_; }

    TransformerModel clone() const;

    /// Bitwise equality of config and every named parameter.
    bool equals(const TransformerModel& other) const;

private:
    TransformerModel() = default;
    friend TransformerModel from_named(const ModelConfig&, const std::vector<NamedTensor>&);

    ModelConfig config_;
    core::Tensor tok_emb_, pos_emb_;
    std::vector<LayerWeights> layers_;
    core::Tensor final_gamma_, final_beta_;
    core::Tensor head_w_, head_b_;
};

/// Builds a model from named tensors (checkpoint loading); throws on missing or misshapen entries.
TransformerModel from_named(const ModelConfig& config, const std::vector<NamedTensor>& tensors);

/// Called with each adapter's output `[tokens x d_model]` during a forward pass.
using AdapterOutputHook = std::function<void(const lora::AdapterSite&, const core::Tensor&)>;

struct ForwardOptions {
    /// Adapters to attach; nullptr runs the base model.
    const lora::AdapterTopology* adapters = nullptr;
    /// When set, only these sites contribute; all others add exactly zero.
    const lora::SiteMask* mask = nullptr;
    AdapterOutputHook on_adapter_output;
};

/// Logits `[batch x num_classes]`.
core::Tensor forward(const TransformerModel& model, const TokenBatch& batch, const ForwardOptions& options = {});

}  // namespace loradrop::model
