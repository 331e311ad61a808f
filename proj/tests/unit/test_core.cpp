// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "loradrop/core/error.hpp"
#include "loradrop/core/exact_sum.hpp"
#include "loradrop/core/init.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/core/ops.hpp"
#include "loradrop/core/optim.hpp"
#include "loradrop/core/rng.hpp"
#include "loradrop/core/tape.hpp"
#include "test_util.hpp"

using namespace loradrop;
using core::Tensor;
namespace ops = core::ops;
using testing::check_gradients;
using testing::random_tensor;

TEST_CASE("tensor factories validate shapes") {
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0, 2.0}), DimensionError);
    auto t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
    CHECK_THROWS(t.grad());
}

TEST_CASE("clone is deep and drops the gradient") {
    auto t = Tensor::from_vector({2}, {1, 2}, true);
    t.mutable_grad()[0] = 5.0;
    auto c = t.clone();
    CHECK_FALSE(c.same_storage(t));
    CHECK(core::bitwise_equal(c, t));
    CHECK_FALSE(c.has_grad());
    c.mutable_data()[0] = 9.0;
    CHECK(t.data()[0] == 1.0);
}

TEST_CASE("matmul matches hand arithmetic") {
    auto a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_vector({2, 1}, {5, 6});
    auto c = ops::matmul(a, b);
    CHECK(c.data()[0] == 17.0);
    CHECK(c.data()[1] == 39.0);
    CHECK_THROWS_AS(ops::matmul(b, b), DimensionError);
}

TEST_CASE("linear computes x W^T + b") {
    auto x = Tensor::from_vector({1, 2}, {3, 5});
    auto w = Tensor::from_vector({2, 2}, {1, 0, 2, 1});
    auto b = Tensor::from_vector({2}, {0.5, -1});
    auto y = ops::linear(x, w, b);
    CHECK(y.data()[0] == 3.5);
    CHECK(y.data()[1] == 10.0);
    CHECK_THROWS_AS(ops::linear(Tensor::zeros({1, 3}), w), DimensionError);
}

TEST_CASE("softmax rows sum to one and reject other axes") {
    auto x = Tensor::from_vector({2, 3}, {1, 2, 3, 1000, 1000, 1000});
    auto y = ops::softmax(x);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += y.data()[r * 3 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(y.data()[3] == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(ops::softmax(x, 0), DimensionError);
    CHECK_THROWS_AS(ops::softmax(x, 5), DimensionError);
}

TEST_CASE("layer_norm output has zero mean and unit variance") {
    core::Rng rng(3);
    auto x = random_tensor({4, 8}, rng, false, 3.0);
    auto y = ops::layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 0.0);
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 8; ++c) m += y.data()[r * 8 + c] / 8;
        for (std::size_t c = 0; c < 8; ++c) v += std::pow(y.data()[r * 8 + c] - m, 2) / 8;
        CHECK(std::fabs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cross_entropy of uniform logits is log C") {
    auto logits = Tensor::zeros({3, 4});
    std::vector<int> labels{0, 1, 3};
    CHECK(ops::cross_entropy(logits, labels).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    std::vector<int> bad{0, 1, 4};
    CHECK_THROWS_AS(ops::cross_entropy(logits, bad), ValidationError);
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
    auto table = Tensor::from_vector({3, 2}, {0, 1, 2, 3, 4, 5});
    std::vector<int> ids{2, 0};
    auto e = ops::embedding_lookup(table, ids);
    CHECK(e.data()[0] == 4.0);
    CHECK(e.data()[3] == 1.0);
    std::vector<int> bad{3};
    CHECK_THROWS_AS(ops::embedding_lookup(table, bad), ValidationError);
}

TEST_CASE("gelu uses the exact erf form") {
    auto x = Tensor::from_vector({3}, {-1.0, 0.0, 2.0});
    auto y = ops::gelu(x);
    CHECK(y.data()[0] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == doctest::Approx(1.9544997361036416).epsilon(1e-14));
}

TEST_CASE("non-finite results raise NumericError") {
    auto x = Tensor::from_vector({1}, {std::numeric_limits<double>::max()});
    CHECK_THROWS_AS(ops::mul(x, x), NumericError);
}

TEST_CASE("finite-difference gradients of every op") {
    core::Rng rng(42);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto w = random_tensor({5, 4}, rng);
    auto bias = random_tensor({5}, rng);
    auto m = random_tensor({4, 2}, rng);
    auto gamma = random_tensor({4}, rng);
    auto beta = random_tensor({4}, rng);
    auto table = random_tensor({6, 4}, rng);
    std::vector<int> ids{5, 0, 3};
    std::vector<int> labels{1, 4, 0};
    // A fixed random projection turns any output into a scalar with non-trivial gradients.
    auto probe = [&rng](const core::Shape& shape) { return random_tensor(shape, rng, false); };
    auto pa = probe({3, 4});
    auto p2 = probe({3, 2});
    auto reduce = [](const Tensor& y, const Tensor& p) { return ops::sum(ops::mul(y, p)); };

    struct Case {
        const char* name;
        std::function<Tensor()> loss;
        std::vector<Tensor> params;
    };
    std::vector<Case> cases{
        {"matmul", [&] { return reduce(ops::matmul(a, m), p2); }, {a, m}},
        {"linear", [&] { return ops::cross_entropy(ops::linear(a, w, bias), labels); }, {a, w, bias}},
        {"add", [&] { return reduce(ops::add(a, b), pa); }, {a, b}},
        {"sub", [&] { return reduce(ops::sub(a, b), pa); }, {a, b}},
        {"mul", [&] { return reduce(ops::mul(a, b), pa); }, {a, b}},
        {"mul_scalar", [&] { return reduce(ops::mul_scalar(a, -1.7), pa); }, {a}},
        {"relu", [&] { return reduce(ops::relu(a), pa); }, {a}},
        {"gelu", [&] { return reduce(ops::gelu(a), pa); }, {a}},
        {"softmax", [&] { return reduce(ops::softmax(a), pa); }, {a}},
        {"layer_norm", [&] { return reduce(ops::layer_norm(a, gamma, beta), pa); }, {a, gamma, beta}},
        {"embedding", [&] { return reduce(ops::embedding_lookup(table, ids), pa); }, {table}},
        {"mean", [&] { return ops::mean(ops::mul(a, a)); }, {a}},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        auto r = check_gradients(c.loss, c.params);
        CHECK(r.max_rel < 1e-6);
    }
}

TEST_CASE("attention gradients match central differences") {
    core::Rng rng(7);
    const std::size_t batch = 2, seq = 3, heads = 2, d = 4;
    auto q = random_tensor({batch * seq, d}, rng);
    auto k = random_tensor({batch * seq, d}, rng);
    auto v = random_tensor({batch * seq, d}, rng);
    auto p = random_tensor({batch * seq, d}, rng, false);
    auto loss = [&] { return ops::sum(ops::mul(ops::attention(q, k, v, batch, seq, heads), p)); };
    CHECK(check_gradients(loss, {q, k, v}).max_rel < 1e-6);
    auto pooled = random_tensor({batch * seq, d}, rng);
    auto pp = random_tensor({batch, d}, rng, false);
    auto pool_loss = [&] { return ops::sum(ops::mul(ops::mean_pool(pooled, batch, seq), pp)); };
    CHECK(check_gradients(pool_loss, {pooled}).max_rel < 1e-6);
}

TEST_CASE("attention over a single position returns v") {
    core::Rng rng(1);
    auto q = random_tensor({2, 4}, rng, false);
    auto k = random_tensor({2, 4}, rng, false);
    auto v = random_tensor({2, 4}, rng, false);
    auto y = ops::attention(q, k, v, 2, 1, 2);
    CHECK(core::bitwise_equal(y, v));
}

TEST_CASE("tape records only when active and inputs require grad") {
    auto a = Tensor::from_vector({1}, {2.0}, true);
    auto frozen = Tensor::from_vector({1}, {3.0});
    core::Tape tape;
    {
        core::TapeScope scope(tape);
        (void)ops::mul(frozen, frozen);
        CHECK(tape.size() == 0);
        auto y = ops::sum(ops::mul(a, a));
        CHECK(tape.size() == 2);
        {
            core::NoGradScope ng;
            (void)ops::mul(a, a);
        }
        CHECK(tape.size() == 2);
        tape.backward(y);
    }
    CHECK(tape.size() == 0);
    CHECK(a.grad()[0] == 4.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto a = Tensor::from_vector({2}, {1.0, 2.0}, true);
    core::Tape tape;
    core::TapeScope scope(tape);
    auto y = ops::mul(a, a);
    CHECK_THROWS_AS(tape.backward(y), DimensionError);
}

TEST_CASE("rng streams are reproducible and splits are independent") {
    core::Rng a(9), b(9);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
    core::Rng root(9);
    CHECK(root.split("x").next_u64() == core::Rng(9).split("x").next_u64());
    CHECK(root.split("x").next_u64() != root.split("y").next_u64());
    core::Rng r(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(r.below(7) < 7);
    }
}

TEST_CASE("kaiming init respects its bound") {
    core::Rng rng(2);
    auto t = core::kaiming_init({8, 32}, 32, rng);
    const double bound = std::sqrt(6.0 / 32.0);
    for (double v : t.data()) CHECK(std::fabs(v) <= bound);
    CHECK_THROWS_AS(core::kaiming_init({2, 2}, 0, rng), ValidationError);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    auto p = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
    auto before = p.clone();
    core::Adam opt({p}, {});
    opt.zero_grad();
    p.mutable_grad();
    opt.step();
    CHECK(core::bitwise_equal(p, before));
}

TEST_CASE("adam first step moves each coordinate by about lr") {
    auto p = Tensor::from_vector({2}, {1.0, 1.0}, true);
    core::Adam opt({p}, {});
    auto g = p.mutable_grad();
    g[0] = 3.0;
    g[1] = -0.01;
    opt.step();
    // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps).
    CHECK(p.data()[0] == doctest::Approx(1.0 - 1e-3 * 3.0 / (3.0 + 1e-8)).epsilon(1e-15));
    CHECK(p.data()[1] == doctest::Approx(1.0 + 1e-3 * 0.01 / (0.01 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam requires gradients on trainable parameters") {
    auto p = Tensor::from_vector({1}, {1.0}, true);
    core::OptimizerState state;
    std::vector<Tensor> ps{p};
    CHECK_THROWS_AS(core::adam_step(ps, state), ValidationError);
}

TEST_CASE("exact sum is order independent") {
    core::ExactSum s;
    s.add(1e16);
    s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == 1.0);

    core::Rng rng(11);
    std::vector<double> xs(2000);
    for (auto& x : xs) x = rng.uniform() * std::pow(10.0, rng.uniform(-8, 8));
    core::ExactSum forward, backward, left, right;
    for (double x : xs) forward.add(x);
    for (auto it = xs.rbegin(); it != xs.rend(); ++it) backward.add(*it);
    for (std::size_t i = 0; i < xs.size(); ++i) (i < 700 ? left : right).add(xs[i]);
    left.merge(right);
    CHECK(forward.value() == backward.value());
    CHECK(forward.value() == left.value());
    CHECK_THROWS_AS(s.add(std::nan("")), NumericError);
}

TEST_CASE("atomic writes leave no temp file") {
    testing::TempDir dir("io");
    const auto path = dir.path() / "nested" / "f.txt";
    core::write_file_atomic(path, "hello");
    CHECK(core::read_file(path) == "hello");
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    CHECK_THROWS(core::read_file(dir.path() / "missing"));
}
