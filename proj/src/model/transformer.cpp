// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/model/transformer.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "loradrop/core/error.hpp"
#include "loradrop/core/init.hpp"
#include "loradrop/core/ops.hpp"

namespace loradrop::model {

using core::Tensor;
namespace ops = core::ops;

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor projection(std::size_t out, std::size_t in, core::Rng& rng) {
    return core::normal_init({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
}

}  // namespace

TransformerModel TransformerModel::init(const ModelConfig& config, core::Rng& rng) {
    config.validate();
    TransformerModel m;
    m.config_ = config;
    const auto d = sz(config.d_model), ff = sz(config.d_ff);
    m.tok_emb_ = core::normal_init({sz(config.vocab_size), d}, 1.0, rng, true);
    m.pos_emb_ = core::normal_init({sz(config.max_seq_len), d}, 1.0, rng, true);
    for (int l = 0; l < config.num_layers; ++l) {
        LayerWeights w;
        w.ln1_gamma = Tensor::full({d}, 1.0, true);
        w.ln1_beta = Tensor::zeros({d}, true);
        w.wq = projection(d, d, rng);
        w.bq = Tensor::zeros({d}, true);
        w.wk = projection(d, d, rng);
        w.bk = Tensor::zeros({d}, true);
        w.wv = projection(d, d, rng);
        w.bv = Tensor::zeros({d}, true);
        w.wo = projection(d, d, rng);
        w.bo = Tensor::zeros({d}, true);
        w.ln2_gamma = Tensor::full({d}, 1.0, true);
        w.ln2_beta = Tensor::zeros({d}, true);
        w.w_up = projection(ff, d, rng);
        w.b_up = Tensor::zeros({ff}, true);
        w.w_down = projection(d, ff, rng);
        w.b_down = Tensor::zeros({d}, true);
        m.layers_.push_back(std::move(w));
    }
    m.final_gamma_ = Tensor::full({d}, 1.0, true);
    m.final_beta_ = Tensor::zeros({d}, true);
    m.head_w_ = projection(sz(config.num_classes), d, rng);
    m.head_b_ = Tensor::zeros({sz(config.num_classes)}, true);
    return m;
}

std::vector<NamedTensor> TransformerModel::named_base_parameters() const {
    std::vector<NamedTensor> out{{"embed.token", tok_emb_}, {"embed.position", pos_emb_}};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& w = layers_[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        out.insert(out.end(), {{p + "ln1.gamma", w.ln1_gamma}, {p + "ln1.beta", w.ln1_beta},
                               {p + "attn.wq", w.wq},          {p + "attn.bq", w.bq},
                               {p + "attn.wk", w.wk},          {p + "attn.bk", w.bk},
                               {p + "attn.wv", w.wv},          {p + "attn.bv", w.bv},
                               {p + "attn.wo", w.wo},          {p + "attn.bo", w.bo},
                               {p + "ln2.gamma", w.ln2_gamma}, {p + "ln2.beta", w.ln2_beta},
                               {p + "ffn.w_up", w.w_up},       {p + "ffn.b_up", w.b_up},
                               {p + "ffn.w_down", w.w_down},   {p + "ffn.b_down", w.b_down}});
    }
    out.emplace_back("final_ln.gamma", final_gamma_);
    out.emplace_back("final_ln.beta", final_beta_);
    return out;
}

std::vector<NamedTensor> TransformerModel::named_head_parameters() const {
    return {{"head.w", head_w_}, {"head.b", head_b_}};
}

std::vector<NamedTensor> TransformerModel::named_parameters() const {
    auto out = named_base_parameters();
    for (auto& nt : named_head_parameters()) out.push_back(std::move(nt));
    return out;
}

std::vector<Tensor> TransformerModel::base_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_base_parameters()) out.push_back(t);
    return out;
}

std::vector<Tensor> TransformerModel::head_parameters() const { return {head_w_, head_b_}; }

void TransformerModel::freeze_base() {
    for (auto& [name, t] : named_base_parameters()) {
        Tensor handle = t;
        handle.set_requires_grad(false);
    }
}

bool TransformerModel::base_frozen() const {
    for (const auto& [name, t] : named_base_parameters())
        if (t.requires_grad()) return false;
    return true;
}

void TransformerModel::set_head_trainable(bool trainable) {
    head_w_.set_requires_grad(trainable);
    head_b_.set_requires_grad(trainable);
}

void TransformerModel::reset_head(core::Rng& rng) {
    const bool w_grad = head_w_.requires_grad(), b_grad = head_b_.requires_grad();
    head_w_ = projection(sz(config_.num_classes), sz(config_.d_model), rng);
    head_b_ = Tensor::zeros({sz(config_.num_classes)}, true);
    head_w_.set_requires_grad(w_grad);
    head_b_.set_requires_grad(b_grad);
}

long TransformerModel::trainable_head_count() const {
    long n = 0;
    for (const auto& t : head_parameters())
        if (t.requires_grad()) n += static_cast<long>(t.size());
    return n;
}

TransformerModel TransformerModel::clone() const {
    std::vector<NamedTensor> copies;
    for (const auto& [name, t] : named_parameters()) copies.emplace_back(name, t.clone());
    return from_named(config_, copies);
}

bool TransformerModel::equals(const TransformerModel& other) const {
    if (!(config_ == other.config_)) return false;
    auto a = named_parameters();
    auto b = other.named_parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first || !core::bitwise_equal(a[i].second, b[i].second)) return false;
    }
    return true;
}

TransformerModel from_named(const ModelConfig& config, const std::vector<NamedTensor>& tensors) {
    config.validate();
    std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
    // Build a template to learn the expected names and shapes, then adopt the given tensors.
    core::Rng scratch(0);
    TransformerModel m = TransformerModel::init(config, scratch);
    auto adopt = [&](const std::string& name, Tensor& slot) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ValidationError("missing parameter '" + name + "'");
        if (it->second.shape() != slot.shape()) {
            throw DimensionError("parameter '" + name + "' has shape " + core::shape_str(it->second.shape()) +
                                 ", expected " + core::shape_str(slot.shape()));
        }
        slot = it->second;
        by_name.erase(it);
    };
    adopt("embed.token", m.tok_emb_);
    adopt("embed.position", m.pos_emb_);
    for (std::size_t l = 0; l < m.layers_.size(); ++l) {
        auto& w = m.layers_[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        adopt(p + "ln1.gamma", w.ln1_gamma);
        adopt(p + "ln1.beta", w.ln1_beta);
        adopt(p + "attn.wq", w.wq);
        adopt(p + "attn.bq", w.bq);
        adopt(p + "attn.wk", w.wk);
        adopt(p + "attn.bk", w.bk);
        adopt(p + "attn.wv", w.wv);
        adopt(p + "attn.bv", w.bv);
        adopt(p + "attn.wo", w.wo);
        adopt(p + "attn.bo", w.bo);
        adopt(p + "ln2.gamma", w.ln2_gamma);
        adopt(p + "ln2.beta", w.ln2_beta);
        adopt(p + "ffn.w_up", w.w_up);
        adopt(p + "ffn.b_up", w.b_up);
        adopt(p + "ffn.w_down", w.w_down);
        adopt(p + "ffn.b_down", w.b_down);
    }
    adopt("final_ln.gamma", m.final_gamma_);
    adopt("final_ln.beta", m.final_beta_);
    adopt("head.w", m.head_w_);
    adopt("head.b", m.head_b_);
    if (!by_name.empty()) throw ValidationError("unexpected parameter '" + by_name.begin()->first + "'");
    return m;
}

namespace {

void validate_batch(const ModelConfig& config, const TokenBatch& batch) {
    if (batch.batch == 0 || batch.seq == 0 || batch.ids.size() != batch.batch * batch.seq) {
        throw DimensionError("token batch must be a non-empty " + std::to_string(batch.batch) + "x" +
                             std::to_string(batch.seq) + " matrix, got " + std::to_string(batch.ids.size()) + " ids");
    }
    if (batch.seq > sz(config.max_seq_len)) {
        throw ValidationError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    for (int id : batch.ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                                  std::to_string(config.vocab_size));
        }
    }
}

Tensor project(const Tensor& h, const Tensor& w, const Tensor& b, lora::AdapterSite site, const ForwardOptions& opt) {
    auto y = ops::linear(h, w, b);
    if (!opt.adapters) return y;
    if (opt.mask && !opt.mask->contains(site)) return y;
    const auto* adapter = opt.adapters->resolve(site);
    if (!adapter) return y;
    auto delta = lora::adapter_forward(*adapter, h);
    if (opt.on_adapter_output) opt.on_adapter_output(site, delta);
    return ops::add(y, delta);
}

}  // namespace

Tensor forward(const TransformerModel& model, const TokenBatch& batch, const ForwardOptions& options) {
    const auto& config = model.config();
    validate_batch(config, batch);
    if (options.adapters && options.adapters->num_layers() != config.num_layers) {
        throw DimensionError("topology covers " + std::to_string(options.adapters->num_layers()) +
                             " layers, model has " + std::to_string(config.num_layers));
    }
    std::vector<int> positions(batch.ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq);

    Tensor x = ops::add(ops::embedding_lookup(model.token_embedding(), batch.ids),
                        ops::embedding_lookup(model.position_embedding(), positions));
    const auto& layers = model.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l];
        const int li = static_cast<int>(l);
        try {
            auto h = ops::layer_norm(x, w.ln1_gamma, w.ln1_beta);
            auto q = project(h, w.wq, w.bq, {li, lora::MatrixKind::query}, options);
            auto k = ops::linear(h, w.wk, w.bk);
            auto v = project(h, w.wv, w.bv, {li, lora::MatrixKind::value}, options);
            auto a = ops::attention(q, k, v, batch.batch, batch.seq, sz(config.num_heads));
            x = ops::add(x, ops::linear(a, w.wo, w.bo));
            auto h2 = ops::layer_norm(x, w.ln2_gamma, w.ln2_beta);
            auto f = ops::linear(ops::gelu(ops::linear(h2, w.w_up, w.b_up)), w.w_down, w.b_down);
            x = ops::add(x, f);
        } catch (const NumericError& e) {
            throw NumericError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
    auto pooled = ops::mean_pool(ops::layer_norm(x, model.final_norm_gamma(), model.final_norm_beta()), batch.batch,
                                 batch.seq);
    return ops::linear(pooled, model.head_weight(), model.head_bias());
}

}  // namespace loradrop::model
