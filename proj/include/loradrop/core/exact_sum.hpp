// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace loradrop::core {

/// Error-free running sum of doubles (Shewchuk's non-overlapping partials).
///
/// value() is the correctly rounded total, independent of the order in which
/// terms were added or partial sums merged.
class ExactSum {
public:
    void add(double x);
    void merge(const ExactSum& other);
    double value() const;
    const std::vector<double>& partials() const { return partials_; }

private:
    std::vector<double> partials_;
};

}  // namespace loradrop::core
