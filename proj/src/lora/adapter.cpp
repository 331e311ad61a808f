// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/lora/adapter.hpp"

#include <algorithm>
#include <charconv>

#include "loradrop/core/error.hpp"
#include "loradrop/core/init.hpp"
#include "loradrop/core/ops.hpp"

namespace loradrop::lora {

std::string_view to_string(MatrixKind kind) { return kind == MatrixKind::query ? "query" : "value"; }

MatrixKind matrix_kind_from_string(std::string_view name) {
    if (name == "query") return MatrixKind::query;
    if (name == "value") return MatrixKind::value;
    throw ValidationError("unknown matrix kind '" + std::string(name) + "'");
}

std::string AdapterSite::key() const { return std::to_string(layer) + "." + std::string(to_string(kind)); }

AdapterSite AdapterSite::parse(std::string_view key) {
    const auto dot = key.find('.');
    if (dot == std::string_view::npos) throw ValidationError("malformed site key '" + std::string(key) + "'");
    AdapterSite site;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + dot, site.layer);
    if (ec != std::errc{} || ptr != key.data() + dot || site.layer < 0) {
        throw ValidationError("malformed site key '" + std::string(key) + "'");
    }
    site.kind = matrix_kind_from_string(key.substr(dot + 1));
    return site;
}

LoRAAdapter LoRAAdapter::create(AdapterId id, int d_in, int d_out, int rank, double scale, core::Rng& rng) {
    if (rank < 1 || rank > std::min(d_in, d_out)) {
        throw ValidationError("adapter rank " + std::to_string(rank) + " outside [1, min(" + std::to_string(d_in) +
                              ", " + std::to_string(d_out) + ")]");
    }
    LoRAAdapter ad;
    ad.id = std::move(id);
    ad.rank = rank;
    ad.scale = scale;
    const auto r = static_cast<std::size_t>(rank);
    ad.a = core::kaiming_init({r, static_cast<std::size_t>(d_in)}, d_in, rng, true);
    ad.b = core::zeros_init({static_cast<std::size_t>(d_out), r}, true);
    return ad;
}

LoRAAdapter LoRAAdapter::clone() const {
    LoRAAdapter c = *this;
    c.a = a.clone();
    c.b = b.clone();
    return c;
}

void LoRAAdapter::validate() const {
    if (!a.defined() || !b.defined() || a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("adapter " + id.value + ": A and B must be matrices");
    }
    if (a.dim(0) != static_cast<std::size_t>(rank) || b.dim(1) != static_cast<std::size_t>(rank)) {
        throw DimensionError("adapter " + id.value + ": factors " + core::shape_str(a.shape()) + " / " +
                             core::shape_str(b.shape()) + " disagree with rank " + std::to_string(rank));
    }
    if (rank < 1 || rank > std::min(d_in(), d_out())) {
        throw ValidationError("adapter " + id.value + ": rank " + std::to_string(rank) + " out of range");
    }
}

core::Tensor adapter_forward(const LoRAAdapter& adapter, const core::Tensor& x) {
    if (x.cols() != static_cast<std::size_t>(adapter.d_in())) {
        throw DimensionError("adapter " + adapter.id.value + " expects input width " + std::to_string(adapter.d_in()) +
                             ", got " + core::shape_str(x.shape()));
    }
    auto low = core::ops::linear(x, adapter.a);
    auto out = core::ops::linear(low, adapter.b);
    return adapter.scale == 1.0 ? out : core::ops::mul_scalar(out, adapter.scale);
}

}  // namespace loradrop::lora
