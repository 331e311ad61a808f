// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/harness/runner.hpp"

#include <chrono>
#include <ctime>
#include <sstream>

#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/core/optim.hpp"
#include "loradrop/lora/capture.hpp"
#include "loradrop/model/checkpoint.hpp"
#include "loradrop/model/pretrain.hpp"
#include "loradrop/model/training.hpp"

namespace loradrop::harness {

namespace {

template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

}  // namespace

Environment prepare_environment(const ExperimentConfig& config) {
    return stage("prepare", [&] {
        config.validate();
        auto [train, dev] = data::generate(config.task);
        data::validate_for_model(train, config.model.vocab_size, config.model.max_seq_len, config.model.num_classes);
        if (!dev.empty()) {
            data::validate_for_model(dev, config.model.vocab_size, config.model.max_seq_len,
                                     config.model.num_classes);
        }
        if (config.base_checkpoint) {
            auto base = model::load_checkpoint(*config.base_checkpoint);
            if (!(base.config() == config.model)) {
                throw ValidationError("checkpoint config does not match the experiment's model config");
            }
            base.freeze_base();
            return Environment{std::move(train), std::move(dev), std::move(base)};
        }
        core::Rng rng(config.model_seed);
        auto init_rng = rng.split("init");
        auto base = model::TransformerModel::init(config.model, init_rng);
        auto pre_task = config.task;
        if (config.pretrain.family) pre_task.family = *config.pretrain.family;
        model::PretrainOptions opt;
        opt.learning_rate = config.pretrain.learning_rate;
        opt.batch_size = config.pretrain.batch_size;
        opt.train_size = config.pretrain.train_size;
        auto pre_rng = rng.split("pretrain");
        model::pretrain_base(base, pre_task, config.pretrain.steps, pre_rng, opt);
        base.freeze_base();
        return Environment{std::move(train), std::move(dev), std::move(base)};
    });
}

model::TransformerModel task_model(const Environment& env, const RunSeeds& seeds) {
    auto m = env.base.clone();
    m.freeze_base();
    core::Rng rng(seeds.head);
    m.reset_head(rng);
    m.set_head_trainable(true);
    return m;
}

FinetuneResult finetune(model::TransformerModel& model, lora::AdapterTopology& topology, const data::Dataset& train,
                        const data::Dataset& dev, const OptimConfig& optim, std::uint64_t order_seed) {
    if (!model.base_frozen()) throw ValidationError("finetune requires a frozen base");
    topology.validate_against(model.config());
    if (dev.empty()) throw ValidationError("finetune needs a non-empty dev set");

    std::vector<core::Tensor> params = topology.parameters();
    for (const auto& t : model.head_parameters())
        if (t.requires_grad()) params.push_back(t);
    core::AdamOptions adam;
    adam.learning_rate = optim.learning_rate;
    core::Adam optimizer(std::move(params), adam);

    model::ForwardOptions fwd;
    fwd.adapters = &topology;
    FinetuneResult r;
    auto snapshot = [&] {
        r.best_topology = topology.clone();
        r.best_head.clear();
        for (const auto& t : model.head_parameters()) r.best_head.push_back(t.clone());
    };
    // Steps are counted across epochs so a failure names the global step.
    long steps = 0;
    auto eval_dev = [&] {
        try {
            return model::evaluate(model, dev, fwd);
        } catch (const NumericError& e) {
            throw NumericError("dev evaluation after step " + std::to_string(steps) + ": " + e.what());
        }
    };
    const auto initial = eval_dev();
    r.dev_accuracy = initial.accuracy;
    r.dev_loss = initial.loss;
    snapshot();

    core::Rng order(order_seed);
    for (int e = 1; e <= optim.epochs; ++e) {
        model::EpochStats stats;
        try {
            stats = model::train_epoch(model, fwd, train, optimizer, optim.batch_size, order);
        } catch (const NumericError& err) {
            throw NumericError("epoch " + std::to_string(e) + " (" + std::to_string(steps) +
                               " earlier steps), " + err.what());
        }
        steps += stats.steps;
        const auto ev = eval_dev();
        r.curve.push_back({e, stats.mean_loss, ev.loss, ev.accuracy});
        if (e == 1 || ev.accuracy > r.dev_accuracy) {
            r.best_epoch = e;
            r.dev_accuracy = ev.accuracy;
            r.dev_loss = ev.loss;
            snapshot();
        }
    }
    return r;
}

nlohmann::json result_to_json(const RunResult& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& c : r.curve) {
        curve.push_back(
            {{"epoch", c.epoch}, {"train_loss", c.train_loss}, {"dev_loss", c.dev_loss}, {"dev_accuracy", c.dev_accuracy}});
    }
    nlohmann::json retained = nlohmann::json::object();
    for (const auto& [kind, k] : r.retained) retained[std::string(lora::to_string(kind))] = k;
    nlohmann::json j = {{"task", r.task},
                        {"ablation", std::string(adapt::to_string(r.ablation))},
                        {"threshold", r.threshold},
                        {"seeds",
                         {{"head", r.seeds.head},
                          {"sampling", r.seeds.sampling},
                          {"warmup", r.seeds.warmup},
                          {"adapters", r.seeds.adapters},
                          {"ablation", r.seeds.ablation},
                          {"order", r.seeds.order}}},
                        {"dev_accuracy", r.dev_accuracy},
                        {"dev_loss", r.dev_loss},
                        {"best_epoch", r.best_epoch},
                        {"curve", std::move(curve)},
                        {"params", {{"lora", r.lora_params}, {"lora_plus_head", r.lora_plus_head_params}}},
                        {"retained", std::move(retained)}};
    j["plan"] = r.plan ? adapt::plan_to_json(*r.plan) : nlohmann::json(nullptr);
    j["masked_accuracy"] = r.masked_accuracy ? nlohmann::json(*r.masked_accuracy) : nlohmann::json(nullptr);
    return j;
}

std::string metrics_csv(const RunResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,dev_loss,dev_accuracy\n";
    for (const auto& c : r.curve) os << c.epoch << ',' << c.train_loss << ',' << c.dev_loss << ',' << c.dev_accuracy << '\n';
    return os.str();
}

importance::ImportanceReport run_importance(const ExperimentConfig& config, const model::TransformerModel& model,
                                            const data::Dataset& train, lora::CapturedOutputs* capture) {
    importance::SamplingConfig sampling{config.alpha, config.seeds.sampling};
    importance::WarmupConfig warmup;
    warmup.epochs = config.warmup_epochs;
    warmup.max_steps = config.warmup_max_steps;
    warmup.learning_rate = config.warmup_learning_rate;
    warmup.batch_size = config.finetune.batch_size;
    warmup.rank = config.rank;
    warmup.scale = config.scale;
    warmup.seed = config.seeds.warmup;
    return importance::evaluate_importance(model, train, sampling, warmup, capture);
}

adapt::BuildOptions build_options(const ExperimentConfig& config) {
    adapt::BuildOptions opt;
    opt.config = config.model;
    opt.rank = config.rank;
    opt.scale = config.scale;
    opt.init = core::Rng(config.seeds.adapters);
    opt.selection = core::Rng(config.seeds.ablation);
    return opt;
}

TrainedRun train_with_plan(const ExperimentConfig& config, const Environment& env, const adapt::RetentionPlan& plan) {
    auto topology = stage("adapt", [&] { return adapt::build_topology(plan, config.ablation, build_options(config)); });

    RunResult r;
    r.task = std::string(data::to_string(config.task.family));
    r.ablation = config.ablation;
    r.threshold = config.threshold;
    r.seeds = config.seeds;
    r.plan = plan;
    r.lora_params = lora::trainable_param_count(topology, config.model);
    r.lora_plus_head_params = r.lora_params + lora::head_param_count(config.model);
    for (auto kind : lora::kMatrixKinds) r.retained[kind] = static_cast<int>(plan.group(kind).k());

    auto model = task_model(env, config.seeds);
    auto ft = stage("finetune",
                    [&] { return finetune(model, topology, env.train, env.dev, config.finetune, config.seeds.order); });
    r.curve = ft.curve;
    r.best_epoch = ft.best_epoch;
    r.dev_accuracy = ft.dev_accuracy;
    r.dev_loss = ft.dev_loss;
    return TrainedRun{std::move(r), std::move(*ft.best_topology), std::move(ft.best_head)};
}

model::TransformerModel trained_model(const Environment& env, const TrainedRun& run) {
    auto model = env.base.clone();
    model.freeze_base();
    auto head = model.head_parameters();
    if (head.size() != run.head.size()) throw ValidationError("trained head does not match the model");
    for (std::size_t i = 0; i < head.size(); ++i) {
        if (head[i].shape() != run.head[i].shape()) throw DimensionError("trained head does not match the model");
        auto dst = head[i].mutable_data();
        const auto src = run.head[i].data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return model;
}

importance::ImportanceReport trained_importance(const Environment& env, const TrainedRun& run,
                                                const importance::ImportanceReport& warmup_report) {
    const auto subset = importance::stratified_sample(env.train, warmup_report.sampling);
    const auto model = trained_model(env, run);
    const auto captured = lora::capture_squared_norms(model, run.topology, subset);
    auto report = warmup_report;
    report.warmup_steps = 0;
    const int layers = model.config().num_layers;
    for (auto kind : lora::kMatrixKinds) {
        auto& gi = report.groups[kind];
        gi.g = captured.group_totals(kind, layers);
        gi.importance = importance::normalize(gi.g);
    }
    return report;
}

double masked_accuracy(const Environment& env, const TrainedRun& run, const lora::SiteMask& mask) {
    const auto model = trained_model(env, run);
    model::ForwardOptions fwd;
    fwd.adapters = &run.topology;
    fwd.mask = &mask;
    return model::evaluate(model, env.dev, fwd).accuracy;
}

namespace {

RunResult run_impl(const ExperimentConfig& config, const Environment& env, const importance::ImportanceReport& report,
                   const adapt::RetentionPlan& plan, std::optional<lora::AdapterTopology>* trained_out) {
    using adapt::AblationKind;
    auto run = train_with_plan(config, env, plan);
    if (config.ablation == AblationKind::infer_keep_large || config.ablation == AblationKind::infer_keep_small) {
        run.result.masked_accuracy = stage("inference", [&] {
            const auto keep =
                config.ablation == AblationKind::infer_keep_large ? adapt::Keep::large : adapt::Keep::small;
            const auto ranked = trained_importance(env, run, report);
            return masked_accuracy(env, run, adapt::inference_mask(run.topology, ranked, keep, plan));
        });
    }
    if (trained_out) *trained_out = std::move(run.topology);
    return std::move(run.result);
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

RunResult run_with_plan(const ExperimentConfig& config, const Environment& env,
                        const importance::ImportanceReport& report, const adapt::RetentionPlan& plan) {
    return run_impl(config, env, report, plan, nullptr);
}

RunResult run_pipeline(const ExperimentConfig& config, const Environment* env) {
    const auto start = std::chrono::steady_clock::now();
    stage("config", [&] { config.validate(); });
    std::optional<Environment> own_env;
    if (!env) {
        own_env.emplace(prepare_environment(config));
        env = &*own_env;
    }
    const bool persist = !config.output_dir.empty();
    lora::CapturedOutputs capture;
    const auto report = stage("importance", [&] {
        auto m = task_model(*env, config.seeds);
        return run_importance(config, m, env->train, persist ? &capture : nullptr);
    });
    const auto plan = stage("select", [&] { return adapt::select_retained(report, config.threshold); });
    std::optional<lora::AdapterTopology> trained;
    auto result = run_impl(config, *env, report, plan, &trained);
    result.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (persist) {
        stage("persist", [&] {
            const auto& dir = config.output_dir;
            save_config(config, dir / "config.json");
            importance::save_report(report, dir / "importance.json");
            core::write_file_atomic(dir / "histogram.csv",
                                    importance::histogram_csv(importance::norm_histogram(capture, 20)));
            core::write_file_atomic(dir / "plan.json", adapt::plan_to_json(plan).dump(2) + "\n");
            lora::save_topology(*trained, dir / "topology.json");
            core::write_file_atomic(dir / "result.json", result_to_json(result).dump(2) + "\n");
            core::write_file_atomic(dir / "metrics.csv", metrics_csv(result));
            nlohmann::json manifest = {
                {"format", "loradrop.manifest"},
                {"version", 1},
                {"created", utc_timestamp()},
                {"wall_clock_seconds", result.wall_clock_seconds},
                {"dataset_fingerprint", {{"train", data::fingerprint(env->train)}, {"dev", data::fingerprint(env->dev)}}},
                {"files",
                 {"config.json", "importance.json", "histogram.csv", "plan.json", "topology.json", "result.json",
                  "metrics.csv"}},
                {"seeds", config_to_json(config).at("seeds")},
                {"model_seed", config.model_seed},
                {"data_seed", config.task.seed}};
            core::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
        });
    }
    return result;
}

}  // namespace loradrop::harness
