// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "loradrop/core/error.hpp"

namespace loradrop::core {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_extents(shape);
    auto impl = std::make_shared<Impl>();
    impl->data.assign(numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
    check_extents(shape);
    if (numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ValidationError("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::size() const { return impl().data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::cols() const { return shape().back(); }
std::size_t Tensor::rows() const { return size() / cols(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ValidationError("tensor " + shape_str(shape()) + " has no gradient");
    return impl().grad;
}

std::span<double> Tensor::mutable_grad() const {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
    return im.grad;
}

void Tensor::zero_grad() const {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::clear_grad() const { impl().grad.clear(); }

Tensor Tensor::clone() const {
    auto copy = std::make_shared<Impl>();
    copy->shape = impl().shape;
    copy->data = impl().data;
    copy->requires_grad = impl().requires_grad;
    return Tensor(std::move(copy));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    auto da = a.data();
    auto db = b.data();
    return std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) == 0;
}

void check_finite(const Tensor& t, const char* where) {
    auto d = t.data();
    auto it = std::find_if(d.begin(), d.end(), [](double v) { return !std::isfinite(v); });
    if (it != d.end()) {
        throw NumericError(std::string("non-finite value in output of ") + where + " at flat index " +
                           std::to_string(it - d.begin()));
    }
}

}  // namespace loradrop::core
