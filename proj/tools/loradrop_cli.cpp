// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end for the loradrop laboratory.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "loradrop/adapt/adapt.hpp"
#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/harness/experiments.hpp"
#include "loradrop/importance/importance.hpp"
#include "loradrop/lora/capture.hpp"
#include "loradrop/lora/topology.hpp"
#include "loradrop/model/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace loradrop;

namespace {

struct Common {
    std::string config;
    std::string task;
    std::optional<double> alpha;
    std::optional<double> threshold;
    std::optional<int> rank;
    std::string ablation;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<long> pretrain_steps;
    std::string base;
    std::string out = "loradrop_out";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Experiment config (JSON)");
    cmd->add_option("--task", c.task, "Task family: token-count, pairwise-order, nested-dependency");
    cmd->add_option("--alpha", c.alpha, "Importance sample ratio");
    cmd->add_option("--threshold", c.threshold, "Retention threshold T");
    cmd->add_option("--rank", c.rank, "LoRA rank");
    cmd->add_option("--ablation", c.ablation, "Ablation kind (lora_drop, without_share, inverse, ...)");
    cmd->add_option("--seed", c.seed, "Master run seed (first replicate for multi-seed commands)");
    cmd->add_option("--epochs", c.epochs, "Fine-tuning epochs");
    cmd->add_option("--pretrain-steps", c.pretrain_steps, "Base pretraining steps");
    cmd->add_option("--base", c.base, "Frozen base checkpoint to load instead of pretraining");
    cmd->add_option("--out", c.out, "Output directory");
}

// Config file first, then flag overrides.
harness::ExperimentConfig resolve(const Common& c) {
    harness::ExperimentConfig cfg;
    if (!c.config.empty()) cfg = harness::load_config(c.config);
    if (!c.task.empty()) cfg.task.family = data::task_family_from_string(c.task);
    if (c.alpha) cfg.alpha = *c.alpha;
    if (c.threshold) cfg.threshold = *c.threshold;
    if (c.rank) cfg.rank = *c.rank;
    if (!c.ablation.empty()) cfg.ablation = adapt::ablation_from_string(c.ablation);
    if (c.seed) cfg = harness::with_seed(cfg, *c.seed);
    if (c.epochs) cfg.finetune.epochs = *c.epochs;
    if (c.pretrain_steps) cfg.pretrain.steps = *c.pretrain_steps;
    if (!c.base.empty()) cfg.base_checkpoint = fs::path(c.base);
    cfg.validate();
    return cfg;
}

std::vector<std::uint64_t> replicate_seeds(const Common& c, int n) {
    if (n < 1) throw ValidationError("--replicates must be at least 1");
    const std::uint64_t first = c.seed.value_or(1);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
    return seeds;
}

void write(const fs::path& path, const std::string& text) {
    core::write_file_atomic(path, text);
    std::printf("wrote %s\n", path.string().c_str());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write(path, j.dump(2) + "\n"); }

template <class F>
auto in_stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

harness::ExperimentConfig setup(const Common& c, const fs::path& out) {
    auto cfg = in_stage("config", [&] { return resolve(c); });
    fs::create_directories(out);
    harness::save_config(cfg, out / "config.json");
    return cfg;
}

void print_result(const harness::RunResult& r) {
    std::printf("%s %s T=%.3f: dev accuracy %.4f (best epoch %d), retained q=%d v=%d, lora params %ld\n",
                r.task.c_str(), std::string(adapt::to_string(r.ablation)).c_str(), r.threshold, r.dev_accuracy,
                r.best_epoch, r.retained.count(lora::MatrixKind::query) ? r.retained.at(lora::MatrixKind::query) : 0,
                r.retained.count(lora::MatrixKind::value) ? r.retained.at(lora::MatrixKind::value) : 0,
                r.lora_params);
    if (r.masked_accuracy) std::printf("masked inference accuracy %.4f\n", *r.masked_accuracy);
}

void print_importance(const importance::ImportanceReport& report) {
    for (const auto& [kind, g] : report.groups) {
        std::printf("%-6s", std::string(lora::to_string(kind)).c_str());
        for (double v : g.importance) std::printf(" %.4f", v);
        std::printf("\n");
    }
}

// ---------------------------------------------------------------------------

void cmd_pretrain(const Common& c) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto env = harness::prepare_environment(cfg);
    in_stage("persist", [&] {
        model::save_checkpoint(env.base, out / "base.json");
        std::printf("wrote %s\n", (out / "base.json").string().c_str());
    });
}

void cmd_importance(const Common& c) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto env = harness::prepare_environment(cfg);
    lora::CapturedOutputs capture;
    const auto report = in_stage("importance", [&] {
        return harness::run_importance(cfg, harness::task_model(env, cfg.seeds), env.train, &capture);
    });
    print_importance(report);
    in_stage("persist", [&] {
        importance::save_report(report, out / "importance.json");
        std::printf("wrote %s\n", (out / "importance.json").string().c_str());
        write(out / "histogram.csv", importance::histogram_csv(importance::norm_histogram(capture, 20)));
    });
}

void cmd_adapt(const Common& c, const std::string& importance_path) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto report = in_stage("importance", [&] { return importance::load_report(importance_path); });
    const auto plan = in_stage("select", [&] { return adapt::select_retained(report, cfg.threshold); });
    const auto topo =
        in_stage("adapt", [&] { return adapt::build_topology(plan, cfg.ablation, harness::build_options(cfg)); });
    for (const auto& [kind, g] : plan.groups) {
        std::printf("%-6s retained %zu of %d\n", std::string(lora::to_string(kind)).c_str(), g.k(), plan.num_layers);
    }
    std::printf("trainable adapter parameters %ld\n", lora::trainable_param_count(topo, cfg.model));
    in_stage("persist", [&] {
        write_json(out / "plan.json", adapt::plan_to_json(plan));
        lora::save_topology(topo, out / "topology.json");
        std::printf("wrote %s\n", (out / "topology.json").string().c_str());
    });
}

void cmd_finetune(const Common& c, const std::string& plan_path, const std::string& importance_path) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto plan = in_stage(
        "select", [&] { return adapt::plan_from_json(nlohmann::json::parse(core::read_file(plan_path))); });
    cfg.threshold = plan.threshold;
    harness::save_config(cfg, out / "config.json");
    const bool masked = cfg.ablation == adapt::AblationKind::infer_keep_large ||
                        cfg.ablation == adapt::AblationKind::infer_keep_small;
    if (masked && importance_path.empty()) {
        throw StageError("config", "--importance is required for " + std::string(adapt::to_string(cfg.ablation)));
    }
    const auto env = harness::prepare_environment(cfg);
    harness::RunResult result;
    if (masked) {
        const auto report = in_stage("importance", [&] { return importance::load_report(importance_path); });
        result = harness::run_with_plan(cfg, env, report, plan);
    } else {
        result = harness::train_with_plan(cfg, env, plan).result;
    }
    print_result(result);
    in_stage("persist", [&] {
        write_json(out / "result.json", harness::result_to_json(result));
        write(out / "metrics.csv", harness::metrics_csv(result));
    });
}

void cmd_pipeline(const Common& c) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    cfg.output_dir = out;
    print_result(harness::run_pipeline(cfg));
    std::printf("wrote run files to %s\n", out.string().c_str());
}

void cmd_sweep_threshold(const Common& c, const std::vector<double>& thresholds, int replicates) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto seeds = in_stage("config", [&] { return replicate_seeds(c, replicates); });
    const auto env = harness::prepare_environment(cfg);
    const auto rows = in_stage("sweep", [&] { return harness::sweep_threshold(cfg, env, thresholds, seeds); });
    const auto csv = harness::sweep_csv(rows);
    std::printf("%s", csv.c_str());
    write(out / "sweep_threshold.csv", csv);
}

void cmd_sweep_alpha(const Common& c, const std::vector<double>& ratios, int replicates) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto seeds = in_stage("config", [&] { return replicate_seeds(c, replicates); });
    const auto env = harness::prepare_environment(cfg);
    const auto pairs = in_stage("sweep", [&] { return harness::sweep_alpha(cfg, env, ratios, seeds); });
    const auto csv = harness::alpha_csv(pairs);
    std::printf("%s", csv.c_str());
    write(out / "sweep_alpha.csv", csv);
}

void cmd_ablate(const Common& c, const std::vector<std::string>& kind_names, int replicates) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto seeds = in_stage("config", [&] { return replicate_seeds(c, replicates); });
    std::vector<adapt::AblationKind> kinds;
    in_stage("config", [&] {
        for (const auto& name : kind_names) kinds.push_back(adapt::ablation_from_string(name));
    });
    if (kinds.empty()) kinds.assign(std::begin(harness::kTrainedAblations), std::end(harness::kTrainedAblations));
    const auto env = harness::prepare_environment(cfg);
    const auto table = in_stage("ablate", [&] { return harness::run_ablations(cfg, env, seeds, kinds); });
    const auto csv = harness::ablation_csv(table);
    std::printf("%s", csv.c_str());
    write(out / "ablations.csv", csv);
    if (!table.keep_large.empty()) write(out / "keep.csv", harness::keep_csv(table));
}

// Importance heatmap across task families on one base.
void cmd_report(const Common& c, const std::vector<std::string>& task_names, int replicates) {
    const fs::path out = c.out;
    auto cfg = setup(c, out);
    const auto seeds = in_stage("config", [&] { return replicate_seeds(c, replicates); });
    std::vector<data::TaskFamily> families;
    in_stage("config", [&] {
        for (const auto& name : task_names) families.push_back(data::task_family_from_string(name));
    });
    if (families.empty()) {
        families = {data::TaskFamily::token_count, data::TaskFamily::pairwise_order,
                    data::TaskFamily::nested_dependency};
    }
    auto shared = harness::prepare_environment(cfg);
    std::vector<harness::HeatmapCell> cells;
    for (auto family : families) {
        auto task_cfg = cfg;
        task_cfg.task.family = family;
        const auto env = in_stage("prepare", [&] {
            task_cfg.validate();
            auto [train, dev] = data::generate(task_cfg.task);
            return harness::Environment{std::move(train), std::move(dev), shared.base.clone()};
        });
        const auto part = in_stage("importance", [&] { return harness::importance_cells(task_cfg, env, seeds); });
        cells.insert(cells.end(), part.begin(), part.end());
        std::printf("%s: %zu cells\n", std::string(data::to_string(family)).c_str(), part.size());
    }
    write(out / "heatmap.csv", harness::heatmap_csv(cells));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loradrop: layer-selective LoRA experiments on a small frozen transformer"};
    app.require_subcommand(1);
    Common common;

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain the frozen base and save it");
    add_common(pretrain, common);

    auto* imp = app.add_subcommand("importance", "Evaluate adapter output-norm importance");
    add_common(imp, common);

    std::string importance_path, plan_path;
    auto* adapt_cmd = app.add_subcommand("adapt", "Select retained layers and build the adapter topology");
    add_common(adapt_cmd, common);
    adapt_cmd->add_option("--importance", importance_path, "Importance report (importance.json)")->required();

    auto* finetune = app.add_subcommand("finetune", "Fine-tune under a retention plan");
    add_common(finetune, common);
    finetune->add_option("--plan", plan_path, "Retention plan (plan.json)")->required();
    finetune->add_option("--importance", importance_path, "Importance report, for infer_keep_* ablations");

    auto* pipeline = app.add_subcommand("pipeline", "Importance, selection, topology and fine-tune in one run");
    add_common(pipeline, common);

    int replicates = 3;
    std::vector<double> thresholds{0.5, 0.7, 0.8, 0.9, 1.0};
    auto* sweep_t = app.add_subcommand("sweep-threshold", "Accuracy and retention across thresholds");
    add_common(sweep_t, common);
    sweep_t->add_option("--thresholds", thresholds, "Thresholds to sweep")->delimiter(',');
    sweep_t->add_option("--replicates", replicates, "Seeds per threshold");

    std::vector<double> ratios{0.05, 0.1, 0.2, 0.5};
    auto* sweep_a = app.add_subcommand("sweep-alpha", "Importance rank stability across sample ratios");
    add_common(sweep_a, common);
    sweep_a->add_option("--ratios", ratios, "Sample ratios to compare")->delimiter(',');
    sweep_a->add_option("--replicates", replicates, "Seeds");

    std::vector<std::string> kinds;
    auto* ablate = app.add_subcommand("ablate", "Ablation variants with matched k");
    add_common(ablate, common);
    ablate->add_option("--kinds", kinds, "Ablation kinds (default: every trained kind)")->delimiter(',');
    ablate->add_option("--replicates", replicates, "Seeds");

    std::vector<std::string> tasks;
    auto* report = app.add_subcommand("report", "Importance heatmap (layer x task x group) on one base");
    add_common(report, common);
    report->add_option("--tasks", tasks, "Task families (default: all)")->delimiter(',');
    report->add_option("--replicates", replicates, "Seeds per task");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) cmd_pretrain(common);
        else if (imp->parsed()) cmd_importance(common);
        else if (adapt_cmd->parsed()) cmd_adapt(common, importance_path);
        else if (finetune->parsed()) cmd_finetune(common, plan_path, importance_path);
        else if (pipeline->parsed()) cmd_pipeline(common);
        else if (sweep_t->parsed()) cmd_sweep_threshold(common, thresholds, replicates);
        else if (sweep_a->parsed()) cmd_sweep_alpha(common, ratios, replicates);
        else if (ablate->parsed()) cmd_ablate(common, kinds, replicates);
        else if (report->parsed()) cmd_report(common, tasks, replicates);
    } catch (const StageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: [%s] %s\n", app.get_subcommands().front()->get_name().c_str(), e.what());
        return 1;
    }
    return 0;
}
