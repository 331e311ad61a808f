// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/harness/config.hpp"

#include <string>

#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"
#include "loradrop/core/rng.hpp"
#include "loradrop/data/dataset_io.hpp"

namespace loradrop::harness {

RunSeeds RunSeeds::derive(std::uint64_t master) {
    const core::Rng root(master);
    RunSeeds s;
    s.head = root.split("head").next_u64();
    s.sampling = root.split("sampling").next_u64();
    s.warmup = root.split("warmup").next_u64();
    s.adapters = root.split("adapters").next_u64();
    s.ablation = root.split("ablation").next_u64();
    s.order = root.split("order").next_u64();
    return s;
}

void ExperimentConfig::validate() const {
    model.validate();
    task.validate();
    if (task.vocab_size > model.vocab_size || task.seq_len > model.max_seq_len ||
        task.num_classes != model.num_classes) {
        throw ValidationError("task (vocab " + std::to_string(task.vocab_size) + ", seq " +
                              std::to_string(task.seq_len) + ", classes " + std::to_string(task.num_classes) +
                              ") does not fit the model");
    }
    if (rank < 1 || rank > model.d_model) throw ValidationError("rank must lie in [1, d_model]");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
    if (warmup_epochs < 1) throw ValidationError("warm-up epochs must be >= 1");
    if (warmup_max_steps && *warmup_max_steps < 0) throw ValidationError("warm-up step cap must be >= 0");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in (0, 1]");
    if (finetune.epochs < 0 || finetune.batch_size == 0) throw ValidationError("invalid fine-tune settings");
    if (pretrain.steps < 0 || pretrain.batch_size == 0 || pretrain.train_size < 1) {
        throw ValidationError("invalid pretrain settings");
    }
}

namespace {

nlohmann::json optim_to_json(const OptimConfig& o) {
    return {{"epochs", o.epochs}, {"learning_rate", o.learning_rate}, {"batch_size", o.batch_size}};
}

OptimConfig optim_from_json(const nlohmann::json& j) {
    OptimConfig o;
    o.epochs = j.value("epochs", o.epochs);
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.batch_size = j.value("batch_size", o.batch_size);
    return o;
}

}  // namespace

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json pre = {{"steps", c.pretrain.steps},
                          {"learning_rate", c.pretrain.learning_rate},
                          {"batch_size", c.pretrain.batch_size},
                          {"train_size", c.pretrain.train_size}};
    pre["family"] = c.pretrain.family ? nlohmann::json(std::string(data::to_string(*c.pretrain.family)))
                                      : nlohmann::json(nullptr);
    nlohmann::json warm = {{"epochs", c.warmup_epochs}, {"learning_rate", c.warmup_learning_rate}};
    warm["max_steps"] = c.warmup_max_steps ? nlohmann::json(*c.warmup_max_steps) : nlohmann::json(nullptr);
    return {{"model", model::to_json(c.model)},
            {"task", data::task_spec_to_json(c.task)},
            {"model_seed", c.model_seed},
            {"pretrain", std::move(pre)},
            {"base_checkpoint", c.base_checkpoint ? nlohmann::json(c.base_checkpoint->string()) : nlohmann::json()},
            {"rank", c.rank},
            {"scale", c.scale},
            {"alpha", c.alpha},
            {"warmup", std::move(warm)},
            {"threshold", c.threshold},
            {"ablation", std::string(adapt::to_string(c.ablation))},
            {"finetune", optim_to_json(c.finetune)},
            {"seeds",
             {{"head", c.seeds.head},
              {"sampling", c.seeds.sampling},
              {"warmup", c.seeds.warmup},
              {"adapters", c.seeds.adapters},
              {"ablation", c.seeds.ablation},
              {"order", c.seeds.order}}},
            {"output_dir", c.output_dir.string()}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig c;
        if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
        if (j.contains("task")) c.task = data::task_spec_from_json(j.at("task"));
        c.model_seed = j.value("model_seed", c.model_seed);
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            c.pretrain.steps = p.value("steps", c.pretrain.steps);
            c.pretrain.learning_rate = p.value("learning_rate", c.pretrain.learning_rate);
            c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
            c.pretrain.train_size = p.value("train_size", c.pretrain.train_size);
            if (p.contains("family") && !p.at("family").is_null()) {
                c.pretrain.family = data::task_family_from_string(p.at("family").get<std::string>());
            }
        }
        if (j.contains("base_checkpoint") && !j.at("base_checkpoint").is_null()) {
            c.base_checkpoint = j.at("base_checkpoint").get<std::string>();
        }
        c.rank = j.value("rank", c.rank);
        c.scale = j.value("scale", c.scale);
        c.alpha = j.value("alpha", c.alpha);
        if (j.contains("warmup")) {
            const auto& w = j.at("warmup");
            c.warmup_epochs = w.value("epochs", c.warmup_epochs);
            c.warmup_learning_rate = w.value("learning_rate", c.warmup_learning_rate);
            if (w.contains("max_steps") && !w.at("max_steps").is_null()) c.warmup_max_steps = w.at("max_steps").get<long>();
        }
        c.threshold = j.value("threshold", c.threshold);
        if (j.contains("ablation")) c.ablation = adapt::ablation_from_string(j.at("ablation").get<std::string>());
        if (j.contains("finetune")) c.finetune = optim_from_json(j.at("finetune"));
        if (j.contains("seed")) c.seeds = RunSeeds::derive(j.at("seed").get<std::uint64_t>());
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            c.seeds.head = s.value("head", c.seeds.head);
            c.seeds.sampling = s.value("sampling", c.seeds.sampling);
            c.seeds.warmup = s.value("warmup", c.seeds.warmup);
            c.seeds.adapters = s.value("adapters", c.seeds.adapters);
            c.seeds.ablation = s.value("ablation", c.seeds.ablation);
            c.seeds.order = s.value("order", c.seeds.order);
        }
        c.output_dir = j.value("output_dir", std::string());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed experiment config: ") + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(core::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
    core::write_file_atomic(path, config_to_json(config).dump(2) + "\n");
}

}  // namespace loradrop::harness
