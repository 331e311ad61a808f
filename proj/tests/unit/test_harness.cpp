// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/harness/experiments.hpp"
#include "loradrop/importance/importance.hpp"
#include "loradrop/lora/capture.hpp"
#include "loradrop/model/training.hpp"
#include "test_util.hpp"

using namespace loradrop;
using adapt::AblationKind;
using lora::MatrixKind;

namespace {

harness::ExperimentConfig small_config() {
    harness::ExperimentConfig c;
    c.model.num_layers = 3;
    c.model.d_model = 8;
    c.model.num_heads = 2;
    c.model.d_ff = 16;
    c.model.vocab_size = 8;
    c.model.max_seq_len = 8;
    c.model.num_classes = 2;
    c.task.family = data::TaskFamily::token_count;
    c.task.vocab_size = 8;
    c.task.seq_len = 8;
    c.task.num_classes = 2;
    c.task.train_size = 160;
    c.task.dev_size = 60;
    c.task.seed = 1;
    c.model_seed = 2;
    c.pretrain.steps = 20;
    c.pretrain.train_size = 320;
    c.rank = 2;
    c.finetune.epochs = 2;
    c.seeds = harness::RunSeeds::derive(3);
    return c;
}

harness::ExperimentConfig with_seed_full(harness::ExperimentConfig c) {
    c = harness::with_seed(c, 4);
    c.ablation = AblationKind::full_lora;
    return c;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("run seeds") {
    const auto a = harness::RunSeeds::derive(5);
    CHECK(a == harness::RunSeeds::derive(5));
    CHECK_FALSE(a == harness::RunSeeds::derive(6));
    CHECK(a.head != a.sampling);
    CHECK(a.adapters != a.order);
}

TEST_CASE("experiment configs") {
    auto c = small_config();
    c.warmup_max_steps = 4;
    c.pretrain.family = data::TaskFamily::nested_dependency;
    c.base_checkpoint = "/tmp/base.json";
    c.ablation = AblationKind::random_k;
    c.output_dir = "runs/x";
    CHECK(harness::config_from_json(harness::config_to_json(c)) == c);

    testing::TempDir dir("config");
    harness::save_config(c, dir.path() / "c.json");
    CHECK(harness::load_config(dir.path() / "c.json") == c);

    auto j = harness::config_to_json(small_config());
    j.erase("seeds");
    j["seed"] = 11;
    CHECK(harness::config_from_json(j).seeds == harness::RunSeeds::derive(11));

    auto bad = small_config();
    bad.threshold = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = small_config();
    bad.alpha = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = small_config();
    bad.task.num_classes = 4;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = small_config();
    bad.rank = 9;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("pipeline") {
    const auto config = small_config();
    const auto env = harness::prepare_environment(config);
    CHECK(env.base.base_frozen());

    SUBCASE("zero epochs report the untrained accuracy") {
        auto m = harness::task_model(env, config.seeds);
        core::Rng rng(1);
        auto topo = lora::AdapterTopology::full(config.model, 2, 1.0, rng);
        harness::OptimConfig optim;
        optim.epochs = 0;
        auto ft = harness::finetune(m, topo, env.train, env.dev, optim, 7);
        CHECK(ft.best_epoch == 0);
        CHECK(ft.dev_accuracy == model::evaluate(harness::task_model(env, config.seeds), env.dev).accuracy);
    }
    SUBCASE("fine-tuning leaves the base untouched") {
        auto m = harness::task_model(env, config.seeds);
        auto reference = m.clone();
        core::Rng rng(1);
        auto topo = lora::AdapterTopology::full(config.model, 2, 1.0, rng);
        harness::finetune(m, topo, env.train, env.dev, config.finetune, 7);
        auto a = m.named_base_parameters();
        auto b = reference.named_base_parameters();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(core::bitwise_equal(a[i].second, b[i].second));
    }
    SUBCASE("results are deterministic and independent of the output directory") {
        testing::TempDir d1("pipe1"), d2("pipe2");
        auto c1 = config, c2 = config;
        c1.output_dir = d1.path();
        c2.output_dir = d2.path();
        const auto r1 = harness::run_pipeline(c1, &env);
        const auto r2 = harness::run_pipeline(c2, &env);
        CHECK(harness::result_to_json(r1) == harness::result_to_json(r2));
        for (const char* f : {"importance.json", "plan.json", "topology.json", "result.json", "metrics.csv",
                              "histogram.csv"}) {
            CHECK(core::read_file(d1.path() / f) == core::read_file(d2.path() / f));
        }
        CHECK(std::filesystem::exists(d1.path() / "manifest.json"));
        CHECK(std::filesystem::exists(d1.path() / "config.json"));
        CHECK(lines(core::read_file(d1.path() / "metrics.csv")) == 1 + static_cast<std::size_t>(config.finetune.epochs));
        CHECK(r1.dev_accuracy >= 0.0);
        CHECK(r1.dev_accuracy <= 1.0);

        // Budget accounting against the persisted topology.
        auto topo = lora::load_topology(d1.path() / "topology.json", config.model);
        CHECK(r1.lora_params == lora::trainable_param_count(topo, config.model));
        CHECK(r1.lora_plus_head_params == r1.lora_params + lora::head_param_count(config.model));

        // A persisted config re-executes to the same metrics, even from a fresh environment.
        auto reloaded = harness::load_config(d1.path() / "config.json");
        testing::TempDir d3("pipe3");
        reloaded.output_dir = d3.path();
        harness::run_pipeline(reloaded);
        CHECK(core::read_file(d1.path() / "metrics.csv") == core::read_file(d3.path() / "metrics.csv"));
        CHECK(core::read_file(d1.path() / "result.json") == core::read_file(d3.path() / "result.json"));
    }
    SUBCASE("T = 1 and full_lora are the same run") {
        testing::TempDir d1("t1"), d2("full");
        auto t1 = config, full = config;
        t1.threshold = 1.0;
        t1.output_dir = d1.path();
        full.ablation = AblationKind::full_lora;
        full.output_dir = d2.path();
        const auto a = harness::run_pipeline(t1, &env);
        const auto b = harness::run_pipeline(full, &env);
        CHECK(a.curve.size() == b.curve.size());
        for (std::size_t i = 0; i < a.curve.size(); ++i) {
            CHECK(a.curve[i].dev_accuracy == b.curve[i].dev_accuracy);
            CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
        }
        CHECK(a.dev_accuracy == b.dev_accuracy);
        CHECK(a.lora_params == b.lora_params);
        CHECK(core::read_file(d1.path() / "topology.json") == core::read_file(d2.path() / "topology.json"));
        CHECK(core::read_file(d1.path() / "metrics.csv") == core::read_file(d2.path() / "metrics.csv"));
    }
    SUBCASE("errors carry their stage") {
        auto bad = config;
        bad.threshold = 2.0;
        try {
            harness::run_pipeline(bad, &env);
            FAIL("expected an error");
        } catch (const StageError& e) {
            CHECK(e.stage() == "config");
        }
        bad = config;
        bad.warmup_learning_rate = 0.0;
        try {
            harness::run_pipeline(bad, &env);
            FAIL("expected an error");
        } catch (const StageError& e) {
            CHECK(e.stage() == "importance");
            CHECK(std::string(e.what()).find("degenerate importance") != std::string::npos);
        }
    }
    SUBCASE("a non-finite weight aborts with step and layer") {
        auto m = harness::task_model(env, config.seeds);
        core::Tensor w = m.layers()[1].w_up;
        w.mutable_data()[0] = std::nan("");
        core::Rng rng(1);
        auto topo = lora::AdapterTopology::full(config.model, 2, 1.0, rng);
        try {
            harness::finetune(m, topo, env.train, env.dev, config.finetune, 7);
            FAIL("expected an error");
        } catch (const NumericError& e) {
            const std::string what = e.what();
            INFO(what);
            CHECK(what.find("step 0") != std::string::npos);
            CHECK(what.find("layer 1") != std::string::npos);
        }
        // The same weight hit inside a training step names that step.
        std::vector<core::Tensor> params = topo.parameters();
        core::Adam opt(params, {});
        core::Rng order(3);
        try {
            model::train_epoch(m, {&topo, nullptr, {}}, env.train, opt, 32, order);
            FAIL("expected an error");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).rfind("step 0: layer 1: ", 0) == 0);
        }
    }
    SUBCASE("threshold sweep") {
        const std::vector<double> ts{0.5, 0.9, 1.0};
        const std::vector<std::uint64_t> seeds{1};
        auto rows = harness::sweep_threshold(config, env, ts, seeds);
        REQUIRE(rows.size() == 3);
        for (auto kind : lora::kMatrixKinds) {
            CHECK(rows[0].mean_retained.at(kind) <= rows[1].mean_retained.at(kind));
            CHECK(rows[1].mean_retained.at(kind) <= rows[2].mean_retained.at(kind));
            CHECK(rows[2].mean_retained.at(kind) == 3.0);
        }
        CHECK(lines(harness::sweep_csv(rows)) == 4);
        // The T = 1 row is the full LoRA run of the same seed.
        auto full = harness::with_seed(config, 1);
        full.ablation = AblationKind::full_lora;
        const auto r = harness::run_pipeline(full, &env);
        CHECK(rows[2].runs[0].dev_accuracy == r.dev_accuracy);
    }
    SUBCASE("ablations share k") {
        const std::vector<std::uint64_t> seeds{1};
        auto cfg = config;
        cfg.finetune.epochs = 1;
        auto table = harness::run_ablations(cfg, env, seeds);
        std::map<MatrixKind, int> k;
        for (const auto& run : table.runs) {
            if (run.kind == AblationKind::full_lora) continue;
            const auto& plan = run.result.plan;
            REQUIRE(plan.has_value());
            if (k.empty()) k = run.result.retained;
            CHECK(run.result.retained == k);
        }
        CHECK(table.keep_large.size() == 1);
        CHECK(table.keep_small.size() == 1);
        CHECK(table.keep_large_warmup.size() == 1);
        CHECK(table.keep_small_warmup.size() == 1);
        CHECK(lines(harness::ablation_csv(table)) == 1 + 6 + 6);
        CHECK(lines(harness::keep_csv(table)) == 2);
    }
    SUBCASE("trained importance") {
        auto cfg = with_seed_full(config);
        const auto report = harness::run_importance(cfg, harness::task_model(env, cfg.seeds), env.train);
        const auto plan = adapt::select_retained(report, 1.0);
        const auto run = harness::train_with_plan(cfg, env, plan);
        const auto ranked = harness::trained_importance(env, run, report);
        CHECK(ranked.sample_ids == report.sample_ids);
        CHECK(ranked.warmup_steps == 0);
        const auto subset = importance::stratified_sample(env.train, report.sampling);
        const auto direct = lora::capture_squared_norms(harness::trained_model(env, run), run.topology, subset);
        for (auto kind : lora::kMatrixKinds) {
            const auto g = direct.group_totals(kind, cfg.model.num_layers);
            CHECK(ranked.groups.at(kind).g == g);
            CHECK(ranked.importance(kind) == importance::normalize(g));
            CHECK_FALSE(ranked.groups.at(kind).g == report.groups.at(kind).g);
        }
        // Full mask on the trained run reproduces its own dev accuracy.
        const auto all = adapt::inference_mask(run.topology, ranked, adapt::Keep::large, adapt::select_retained(ranked, 1.0));
        CHECK(harness::masked_accuracy(env, run, all) == run.result.dev_accuracy);
    }
    SUBCASE("alpha sweep") {
        const std::vector<std::uint64_t> seeds{1, 2};
        const std::vector<double> same{0.1, 0.1};
        auto pairs = harness::sweep_alpha(config, env, same, seeds);
        CHECK(pairs.size() == 2 * 2);
        for (const auto& p : pairs) CHECK(p.spearman == doctest::Approx(1.0).epsilon(1e-12));
        const std::vector<double> three{0.1, 0.3, 0.5};
        auto more = harness::sweep_alpha(config, env, three, std::vector<std::uint64_t>{1});
        CHECK(more.size() == 3 * 2);
        CHECK(lines(harness::alpha_csv(more)) == 1 + 6);
    }
    SUBCASE("importance heatmap cells") {
        const std::vector<std::uint64_t> seeds{1, 2};
        std::vector<importance::ImportanceReport> reports;
        auto cells = harness::importance_cells(config, env, seeds, &reports);
        CHECK(reports.size() == 2);
        CHECK(cells.size() == 2 * 2 * 3);
        CHECK(lines(harness::heatmap_csv(cells)) == 1 + cells.size());
    }
}
