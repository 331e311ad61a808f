// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/core/ops.hpp"
#include "loradrop/core/optim.hpp"
#include "loradrop/core/tape.hpp"
#include "loradrop/lora/capture.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/training.hpp"
#include "test_util.hpp"

using namespace loradrop;
using core::Tensor;
using lora::AdapterSite;
using lora::MatrixKind;

namespace {

model::ModelConfig config_with(int layers, int d) {
    model::ModelConfig c;
    c.num_layers = layers;
    c.d_model = d;
    c.num_heads = 1;
    c.d_ff = 2 * d;
    c.vocab_size = 8;
    c.max_seq_len = 4;
    c.num_classes = 2;
    return c;
}

// Gives every B a random value so adapters produce non-zero output.
void randomize_b(const lora::AdapterTopology& topo, core::Rng& rng) {
    for (const auto& [id, ad] : topo.adapters()) {
        Tensor b = ad.b;
        for (auto& v : b.mutable_data()) v = rng.normal();
    }
}

data::Dataset random_dataset(int n, int seq, int vocab, core::Rng& rng, int first_id = 0) {
    data::Dataset ds;
    for (int i = 0; i < n; ++i) {
        data::Example e{first_id + i, {}, 0};
        for (int t = 0; t < seq; ++t) e.tokens.push_back(static_cast<int>(rng.below(vocab)));
        ds.examples.push_back(e);
    }
    return ds;
}

}  // namespace

TEST_CASE("adapter_forward") {
    core::Rng rng(1);
    SUBCASE("fresh adapters output exactly zero") {
        auto ad = lora::LoRAAdapter::create({"x"}, 6, 5, 3, 1.0, rng);
        auto y = lora::adapter_forward(ad, testing::random_tensor({4, 6}, rng, false));
        CHECK(y.shape() == core::Shape{4, 5});
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("hand example") {
        lora::LoRAAdapter ad{{"h"}, Tensor::from_vector({1, 2}, {1, 0}), Tensor::from_vector({2, 1}, {2, 0}), 1, 1.0};
        auto y = lora::adapter_forward(ad, Tensor::from_vector({2}, {3, 5}));
        CHECK(y.data()[0] == 6.0);
        CHECK(y.data()[1] == 0.0);
    }
    SUBCASE("matches the dense product") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t din = 7, dout = 5, r = 3;
            const double s = 0.75;
            lora::LoRAAdapter ad{{"d"}, testing::random_tensor({r, din}, rng), testing::random_tensor({dout, r}, rng),
                                 static_cast<int>(r), s};
            std::vector<double> dense(dout * din, 0.0);
            for (std::size_t o = 0; o < dout; ++o)
                for (std::size_t i = 0; i < din; ++i)
                    for (std::size_t k = 0; k < r; ++k)
                        dense[o * din + i] += s * ad.b.data()[o * r + k] * ad.a.data()[k * din + i];
            auto x = testing::random_tensor({3, din}, rng, false);
            auto y = lora::adapter_forward(ad, x);
            for (std::size_t n = 0; n < 3; ++n) {
                for (std::size_t o = 0; o < dout; ++o) {
                    double ref = 0.0;
                    for (std::size_t i = 0; i < din; ++i) ref += dense[o * din + i] * x.data()[n * din + i];
                    CHECK(std::abs(y.data()[n * dout + o] - ref) <= 1e-12);
                }
            }
        }
    }
    SUBCASE("gradients") {
        lora::LoRAAdapter ad{{"g"}, testing::random_tensor({2, 4}, rng), testing::random_tensor({3, 2}, rng), 2, 1.5};
        auto x = testing::random_tensor({5, 4}, rng, false);
        auto w = testing::random_tensor({5, 3}, rng, false);
        auto check = testing::check_gradients(
            [&] { return core::ops::sum(core::ops::mul(lora::adapter_forward(ad, x), w)); }, {ad.a, ad.b});
        CHECK(check.max_rel < 1e-6);
    }
    SUBCASE("errors") {
        auto ad = lora::LoRAAdapter::create({"e"}, 4, 4, 2, 1.0, rng);
        CHECK_THROWS_AS(lora::adapter_forward(ad, Tensor::zeros({2, 3})), DimensionError);
        CHECK_THROWS_AS(lora::LoRAAdapter::create({"e"}, 4, 4, 5, 1.0, rng), ValidationError);
        CHECK_THROWS_AS(lora::LoRAAdapter::create({"e"}, 4, 4, 0, 1.0, rng), ValidationError);
    }
}

TEST_CASE("site keys") {
    CHECK(AdapterSite{3, MatrixKind::value}.key() == "3.value");
    CHECK(AdapterSite::parse("0.query") == AdapterSite{0, MatrixKind::query});
    CHECK_THROWS_AS(AdapterSite::parse("0.key"), ValidationError);
    CHECK_THROWS_AS(AdapterSite::parse("query"), ValidationError);
}

TEST_CASE("trainable parameter counts") {
    core::Rng rng(2);
    SUBCASE("twelve own sites") {
        const auto c = config_with(6, 32);
        auto topo = lora::AdapterTopology::full(c, 8, 1.0, rng);
        CHECK(lora::trainable_param_count(topo, c) == 6144);
    }
    SUBCASE("shared adapters count once") {
        const auto c = config_with(8, 32);
        lora::AdapterTopology topo(8);
        for (int l = 0; l < 8; ++l) {
            const AdapterSite q{l, MatrixKind::query}, v{l, MatrixKind::value};
            if (l < 5) topo.assign_own(q, lora::LoRAAdapter::create({"q" + std::to_string(l)}, 32, 32, 8, 1.0, rng));
            else topo.assign_shared(q);
            if (l < 7) topo.assign_own(v, lora::LoRAAdapter::create({"v" + std::to_string(l)}, 32, 32, 8, 1.0, rng));
            else topo.assign_shared(v);
        }
        topo.set_shared_adapter(MatrixKind::query, lora::LoRAAdapter::create({"sq"}, 32, 32, 8, 1.0, rng));
        topo.set_shared_adapter(MatrixKind::value, lora::LoRAAdapter::create({"sv"}, 32, 32, 8, 1.0, rng));
        topo.validate_against(c);
        CHECK(lora::trainable_param_count(topo, c) == 7168);
    }
    SUBCASE("dropping lowers the count") {
        const auto c = config_with(6, 32);
        auto full = lora::AdapterTopology::full(c, 8, 1.0, rng);
        lora::AdapterTopology drop(6);
        for (int l = 0; l < 6; ++l) {
            for (auto kind : lora::kMatrixKinds) {
                const AdapterSite s{l, kind};
                if (l % 2 == 0) drop.assign_own(s, lora::LoRAAdapter::create({"L" + s.key()}, 32, 32, 8, 1.0, rng));
                else drop.assign_shared(s);
            }
        }
        for (auto kind : lora::kMatrixKinds)
            drop.set_shared_adapter(kind, lora::LoRAAdapter::create({"s" + std::string(lora::to_string(kind))}, 32, 32,
                                                                    8, 1.0, rng));
        CHECK(lora::trainable_param_count(drop, c) < lora::trainable_param_count(full, c));
    }
    CHECK(lora::head_param_count(config_with(2, 32)) == 66);
}

TEST_CASE("topology invariants") {
    core::Rng rng(3);
    lora::AdapterTopology topo(2);
    for (int l = 0; l < 2; ++l)
        for (auto kind : lora::kMatrixKinds) topo.assign_shared({l, kind});
    SUBCASE("shared sites need a shared adapter") {
        CHECK_THROWS_AS(topo.validate(), ValidationError);
    }
    SUBCASE("absent sites need the remove policy") {
        topo.set_shared_adapter(MatrixKind::query, lora::LoRAAdapter::create({"sq"}, 4, 4, 2, 1.0, rng));
        topo.set_shared_adapter(MatrixKind::value, lora::LoRAAdapter::create({"sv"}, 4, 4, 2, 1.0, rng));
        topo.validate();
        topo.assign_absent({1, MatrixKind::value});
        CHECK_THROWS_AS(topo.validate(), ValidationError);
    }
    SUBCASE("adapter ids are unique") {
        lora::AdapterTopology t(2);
        t.assign_own({0, MatrixKind::query}, lora::LoRAAdapter::create({"a"}, 4, 4, 2, 1.0, rng));
        CHECK_THROWS_AS(t.assign_own({1, MatrixKind::query}, lora::LoRAAdapter::create({"a"}, 4, 4, 2, 1.0, rng)),
                        ValidationError);
    }
    SUBCASE("sites outside the model") {
        CHECK_THROWS_AS(topo.assign_shared({2, MatrixKind::query}), ValidationError);
    }
}

TEST_CASE("shared sites observe one parameter set after a training step") {
    core::Rng rng(4);
    const auto c = config_with(3, 8);
    auto m = model::TransformerModel::init(c, rng);
    m.freeze_base();
    m.set_head_trainable(true);
    lora::AdapterTopology topo(3);
    for (int l = 0; l < 3; ++l) {
        topo.assign_shared({l, MatrixKind::query});
        topo.assign_own({l, MatrixKind::value},
                        lora::LoRAAdapter::create({"v" + std::to_string(l)}, 8, 8, 2, 1.0, rng));
    }
    topo.set_shared_adapter(MatrixKind::query, lora::LoRAAdapter::create({"shared.query"}, 8, 8, 2, 1.0, rng));
    auto params = topo.parameters();
    for (auto& t : m.head_parameters()) params.push_back(t);
    core::Adam opt(params, {});
    auto ds = random_dataset(16, 4, 8, rng);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.examples[i].label = static_cast<int>(i % 2);
    model::ForwardOptions fwd{&topo, nullptr, {}};
    auto order = core::Rng(5);
    model::train_epoch(m, fwd, ds, opt, 8, order);

    const auto* a0 = topo.resolve({0, MatrixKind::query});
    const auto* a2 = topo.resolve({2, MatrixKind::query});
    REQUIRE(a0 == a2);
    CHECK(a0->id.value == "shared.query");
    bool moved = false;
    for (double v : a0->b.data()) moved |= v != 0.0;
    CHECK(moved);
    // The topology holds the one tensor the optimizer updated.
    const auto& stored = topo.adapters().at({"shared.query"});
    CHECK(stored.b.data().data() == a0->b.data().data());
}

TEST_CASE("topology files") {
    core::Rng rng(6);
    const auto c = config_with(2, 16);
    auto topo = lora::AdapterTopology::full(c, 4, 1.0, rng);
    randomize_b(topo, rng);
    testing::TempDir dir("topology");
    const auto path = dir.path() / "topo.json";
    lora::save_topology(topo, path);

    SUBCASE("round trip") {
        auto loaded = lora::load_topology(path, c);
        CHECK(loaded.equals(topo));
    }
    SUBCASE("clone is independent") {
        auto copy = topo.clone();
        CHECK(copy.equals(topo));
        copy.parameters()[0].mutable_data()[0] += 1.0;
        CHECK_FALSE(copy.equals(topo));
    }
    SUBCASE("unknown group kind") {
        auto j = lora::topology_to_json(topo);
        j["groups"]["key"] = "L0.query";
        CHECK_THROWS_AS(lora::topology_from_json(j), ParseError);
        j = lora::topology_to_json(topo);
        j["assignments"]["1.value"] = {{"shared", "key"}};
        CHECK_THROWS_AS(lora::topology_from_json(j), ParseError);
    }
    SUBCASE("version mismatch and malformed files") {
        auto j = lora::topology_to_json(topo);
        j["version"] = 2;
        CHECK_THROWS_AS(lora::topology_from_json(j), ParseError);
        core::write_file_atomic(path, "{\"format\": ");
        CHECK_THROWS_AS(lora::load_topology(path), ParseError);
    }
    SUBCASE("width mismatch against the model") {
        CHECK_THROWS_AS(lora::load_topology(path, config_with(2, 32)), DimensionError);
    }
}

TEST_CASE("capture_squared_norms") {
    core::Rng rng(7);
    SUBCASE("zero adapters give zero accumulators") {
        const auto c = config_with(2, 8);
        auto m = model::TransformerModel::init(c, rng);
        auto topo = lora::AdapterTopology::full(c, 2, 1.0, rng);
        auto cap = lora::capture_squared_norms(m, topo, random_dataset(5, 4, 8, rng));
        REQUIRE(cap.sites.size() == 4);
        for (const auto& [site, s] : cap.sites) {
            CHECK(s.sum.value() == 0.0);
            CHECK(s.tokens == 20);
        }
    }
    SUBCASE("single token hand example") {
        const auto c = config_with(1, 2);
        auto m = model::TransformerModel::init(c, rng);
        // gamma 0 makes the normalized input equal to beta, here [1, 2].
        auto& w = m.layers()[0];
        for (auto& v : w.ln1_gamma.mutable_data()) v = 0.0;
        w.ln1_beta.mutable_data()[0] = 1.0;
        w.ln1_beta.mutable_data()[1] = 2.0;
        lora::AdapterTopology topo(1);
        topo.assign_own({0, MatrixKind::query},
                        {{"q"}, Tensor::from_vector({1, 2}, {1, 0}), Tensor::from_vector({2, 1}, {3, 4}), 1, 1.0});
        topo.assign_own({0, MatrixKind::value}, lora::LoRAAdapter::create({"v"}, 2, 2, 1, 1.0, rng));
        data::Dataset ds;
        ds.examples = {{0, {3}, 0}};
        auto cap = lora::capture_squared_norms(m, topo, ds, {true, 128});
        CHECK(cap.total({0, MatrixKind::query}) == 25.0);
        CHECK(cap.total({0, MatrixKind::value}) == 0.0);
        CHECK(cap.sites.at({0, MatrixKind::query}).per_example == std::vector<double>{25.0});
    }
    SUBCASE("two examples of two tokens match a dense oracle") {
        const auto c = config_with(1, 4);
        auto m = model::TransformerModel::init(c, rng);
        auto& w = m.layers()[0];
        for (auto& v : w.ln1_gamma.mutable_data()) v = rng.uniform(0.5, 1.5);
        for (auto& v : w.ln1_beta.mutable_data()) v = rng.normal() * 0.1;
        auto topo = lora::AdapterTopology::full(c, 2, 0.5, rng);
        randomize_b(topo, rng);
        auto ds = random_dataset(2, 2, 8, rng);
        auto cap = lora::capture_squared_norms(m, topo, ds, {true, 1});

        const auto& ad = topo.adapters().at({"L0.query"});
        const std::size_t d = 4, r = 2;
        std::vector<double> dense(d * d, 0.0);
        for (std::size_t o = 0; o < d; ++o)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t k = 0; k < r; ++k)
                    dense[o * d + i] += 0.5 * ad.b.data()[o * r + k] * ad.a.data()[k * d + i];
        double expected = 0.0;
        std::vector<double> per_example;
        for (const auto& ex : ds.examples) {
            double ex_sum = 0.0;
            for (std::size_t t = 0; t < 2; ++t) {
                std::vector<double> x(d);
                for (std::size_t i = 0; i < d; ++i)
                    x[i] = m.token_embedding().data()[static_cast<std::size_t>(ex.tokens[t]) * d + i] +
                           m.position_embedding().data()[t * d + i];
                const double mean = std::accumulate(x.begin(), x.end(), 0.0) / d;
                double var = 0.0;
                for (double v : x) var += (v - mean) * (v - mean);
                var /= d;
                for (std::size_t i = 0; i < d; ++i)
                    x[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * w.ln1_gamma.data()[i] + w.ln1_beta.data()[i];
                for (std::size_t o = 0; o < d; ++o) {
                    double y = 0.0;
                    for (std::size_t i = 0; i < d; ++i) y += dense[o * d + i] * x[i];
                    ex_sum += y * y;
                }
            }
            per_example.push_back(ex_sum);
            expected += ex_sum;
        }
        const double got = cap.total({0, MatrixKind::query});
        CHECK(got > 0.0);
        CHECK(testing::rel_error(got, expected) < 1e-12);
        const auto& pe = cap.sites.at({0, MatrixKind::query}).per_example;
        REQUIRE(pe.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) CHECK(testing::rel_error(pe[i], per_example[i]) < 1e-12);
    }
    SUBCASE("capture over a disjoint union is the sum of the parts, exactly") {
        const auto c = config_with(2, 8);
        auto m = model::TransformerModel::init(c, rng);
        auto topo = lora::AdapterTopology::full(c, 2, 1.0, rng);
        randomize_b(topo, rng);
        auto d1 = random_dataset(7, 4, 8, rng, 0);
        auto d2 = random_dataset(5, 4, 8, rng, 7);
        data::Dataset both = d1;
        both.examples.insert(both.examples.end(), d2.examples.begin(), d2.examples.end());
        auto whole = lora::capture_squared_norms(m, topo, both, {false, 4});
        auto part = lora::capture_squared_norms(m, topo, d1);
        part.merge(lora::capture_squared_norms(m, topo, d2));
        for (const auto& [site, s] : whole.sites) {
            CHECK(s.sum.value() == part.sites.at(site).sum.value());
            CHECK(s.tokens == part.sites.at(site).tokens);
        }
        // Different batch sizes only change the grouping, never the result.
        auto rebatched = lora::capture_squared_norms(m, topo, both, {false, 1});
        for (const auto& [site, s] : whole.sites) CHECK(s.sum.value() == rebatched.sites.at(site).sum.value());
    }
    SUBCASE("errors") {
        const auto c = config_with(1, 4);
        auto m = model::TransformerModel::init(c, rng);
        auto topo = lora::AdapterTopology::full(c, 2, 1.0, rng);
        try {
            lora::capture_squared_norms(m, topo, data::Dataset{});
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()) == "empty importance subset");
        }
        auto wide = lora::AdapterTopology::full(config_with(1, 8), 2, 1.0, rng);
        CHECK_THROWS_AS(lora::capture_squared_norms(m, wide, random_dataset(1, 2, 8, rng)), DimensionError);
    }
}
