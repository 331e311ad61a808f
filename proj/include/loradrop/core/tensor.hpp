// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace loradrop::core {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// `Tensor` is a handle: copies alias the same storage, which is what the
/// tape relies on to route gradients back to parameters. Use `clone()` for
/// an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;
    /// Extent of the last axis.
    std::size_t cols() const;
    /// Product of every extent except the last.
    std::size_t rows() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Gradient buffer, allocated as zeros on first access. Gradient state lives
    /// in the shared storage, so these are callable through const handles.
    std::span<double> mutable_grad() const;
    void zero_grad() const;
    void clear_grad() const;

    /// Deep copy of shape, data and the requires_grad flag; the gradient is not copied.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    Impl& impl() const;

    std::shared_ptr<Impl> impl_;
};

/// True when shapes match and every stored double has the same bit pattern.
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Throws NumericError naming `where` if any element is NaN or infinite.
void check_finite(const Tensor& t, const char* where);

}  // namespace loradrop::core
