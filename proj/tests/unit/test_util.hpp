// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "loradrop/core/rng.hpp"
#include "loradrop/core/tape.hpp"
#include "loradrop/core/tensor.hpp"

namespace loradrop::testing {

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

/// Compares tape gradients of `loss()` w.r.t. every entry of `params` with
/// central differences of step h.
inline GradCheck check_gradients(const std::function<core::Tensor()>& loss, std::vector<core::Tensor> params,
                                 double h = 1e-5, double floor = 1e-6) {
    for (auto& p : params) p.clear_grad();
    {
        core::Tape tape;
        core::TapeScope scope(tape);
        tape.backward(loss());
    }
    GradCheck out;
    core::NoGradScope no_grad;
    for (auto& p : params) {
        const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                          : std::vector<double>(p.size(), 0.0);
        auto data = p.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double up = loss().item();
            data[i] = orig - h;
            const double down = loss().item();
            data[i] = orig;
            out.max_rel = std::max(out.max_rel, rel_error(analytic[i], (up - down) / (2 * h), floor));
            ++out.checked;
        }
    }
    return out;
}

inline core::Tensor random_tensor(core::Shape shape, core::Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(core::numel(shape));
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return core::Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("loradrop_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace loradrop::testing
