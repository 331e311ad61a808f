// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/core/init.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "loradrop/core/error.hpp"

namespace loradrop::core {

Tensor kaiming_init(Shape shape, long fan_in, Rng& rng, bool requires_grad) {
    if (fan_in <= 0) throw ValidationError("kaiming_init: fan_in must be positive, got " + std::to_string(fan_in));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = rng.uniform(-bound, bound);
    return Tensor::from_vector(std::move(shape), std::move(values), requires_grad);
}

Tensor zeros_init(Shape shape, bool requires_grad) { return Tensor::zeros(std::move(shape), requires_grad); }

Tensor normal_init(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    std::vector<double> values(numel(shape));
    for (double& v : values) v = stddev * rng.normal();
    return Tensor::from_vector(std::move(shape), std::move(values), requires_grad);
}

}  // namespace loradrop::core
