// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "loradrop/core/tensor.hpp"

/// Differentiable primitives. Every op validates shapes, checks its output
/// for non-finite values, and registers a backward rule on the active tape
/// when any input requires a gradient.
///
/// Token activations are kept as 2-D `[tokens x features]` matrices; ops that
/// need the batch/sequence split take the extents explicitly.
namespace loradrop::core::ops {

/// `[m x k] * [k x n] -> [m x n]`.
Tensor matmul(const Tensor& a, const Tensor& b);

/// `x * w^T (+ bias)` along the last axis of x; `w` is `[out x in]`.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

/// Softmax over `axis`; only the last axis is supported (`-1` or `rank-1`).
Tensor softmax(const Tensor& x, int axis = -1);

/// Normalizes each row of the last axis, then applies `gamma * xhat + beta`.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Rows of `table` (`[vocab x d]`) selected by `ids`; result is `[ids.size() x d]`.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

/// Mean softmax cross-entropy of `[batch x classes]` logits; scalar result.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Averages `[batch*seq x d]` over the sequence positions of each example.
Tensor mean_pool(const Tensor& x, std::size_t batch, std::size_t seq);

/// Scaled dot-product self-attention over `[batch*seq x d]` q/k/v split into `heads`.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                 std::size_t heads);

}  // namespace loradrop::core::ops
