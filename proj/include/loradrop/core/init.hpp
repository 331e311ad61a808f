// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "loradrop/core/rng.hpp"
#include "loradrop/core/tensor.hpp"

namespace loradrop::core {

/// Kaiming (He) uniform draw on (-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor kaiming_init(Shape shape, long fan_in, Rng& rng, bool requires_grad = false);

Tensor zeros_init(Shape shape, bool requires_grad = false);

/// Normal(0, stddev) draw.
Tensor normal_init(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

}  // namespace loradrop::core
