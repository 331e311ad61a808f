// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "loradrop/core/rng.hpp"
#include "loradrop/core/tensor.hpp"

namespace loradrop::lora {

/// Attention projection that can host an adapter.
enum class MatrixKind { query, value };

inline constexpr std::array<MatrixKind, 2> kMatrixKinds{MatrixKind::query, MatrixKind::value};

std::string_view to_string(MatrixKind kind);
/// Throws ValidationError on anything other than "query" / "value".
MatrixKind matrix_kind_from_string(std::string_view name);

/// One (layer, projection) position; keyed as "layer.kind", e.g. "3.value".
struct AdapterSite {
    int layer = 0;
    MatrixKind kind = MatrixKind::query;

    std::string key() const;
    static AdapterSite parse(std::string_view key);

    auto operator<=>(const AdapterSite&) const = default;
};

struct AdapterId {
    std::string value;

    auto operator<=>(const AdapterId&) const = default;
};

/// Low-rank pair producing `scale * B * A * x`.
///
/// A is `[rank x d_in]` (Kaiming uniform), B is `[d_out x rank]` (zeros), so
/// a freshly created adapter outputs exactly zero.
struct LoRAAdapter {
    AdapterId id;
    core::Tensor a;
    core::Tensor b;
    int rank = 8;
    double scale = 1.0;

    static LoRAAdapter create(AdapterId id, int d_in, int d_out, int rank, double scale, core::Rng& rng);

    int d_in() const { return static_cast<int>(a.dim(1)); }
    int d_out() const { return static_cast<int>(b.dim(0)); }
    long parameter_count() const { return static_cast<long>(rank) * (d_in() + d_out()); }
    std::vector<core::Tensor> parameters() const { return {a, b}; }

    /// Independent copy of both factors.
    LoRAAdapter clone() const;
    /// Throws on rank/shape inconsistencies.
    void validate() const;
};

/// `scale * (x * A^T) * B^T` along the last axis of `x`; differentiable in A and B.
core::Tensor adapter_forward(const LoRAAdapter& adapter, const core::Tensor& x);

}  // namespace loradrop::lora
