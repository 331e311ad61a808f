// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/harness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "loradrop/core/error.hpp"

namespace loradrop::harness {

using lora::MatrixKind;

ExperimentConfig with_seed(ExperimentConfig config, std::uint64_t seed) {
    config.seeds = RunSeeds::derive(seed);
    return config;
}

namespace {

std::ostringstream csv_stream() {
    std::ostringstream os;
    os.precision(17);
    return os;
}

}  // namespace

std::vector<SweepRow> sweep_threshold(const ExperimentConfig& config, const Environment& env,
                                      std::span<const double> thresholds, std::span<const std::uint64_t> seeds) {
    if (thresholds.empty() || seeds.empty()) throw ValidationError("sweep needs thresholds and seeds");
    for (double t : thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw ValidationError("thresholds must lie in (0, 1]");
    std::vector<SweepRow> rows(thresholds.size());
    for (std::size_t i = 0; i < thresholds.size(); ++i) rows[i].threshold = thresholds[i];
    for (auto seed : seeds) {
        auto cfg = with_seed(config, seed);
        const auto report = run_importance(cfg, task_model(env, cfg.seeds), env.train);
        for (std::size_t i = 0; i < thresholds.size(); ++i) {
            cfg.threshold = thresholds[i];
            rows[i].runs.push_back(run_with_plan(cfg, env, report, adapt::select_retained(report, cfg.threshold)));
        }
    }
    const auto n = static_cast<double>(seeds.size());
    for (auto& row : rows) {
        for (const auto& r : row.runs) {
            for (const auto& [kind, k] : r.retained) row.mean_retained[kind] += k / n;
            row.mean_accuracy += r.dev_accuracy / n;
            row.mean_lora_params += static_cast<double>(r.lora_params) / n;
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    auto os = csv_stream();
    os << "threshold,mean_retained_query,mean_retained_value,mean_accuracy,mean_lora_params,seeds\n";
    for (const auto& r : rows) {
        os << r.threshold << ',' << r.mean_retained.at(MatrixKind::query) << ','
           << r.mean_retained.at(MatrixKind::value) << ',' << r.mean_accuracy << ',' << r.mean_lora_params << ','
           << r.runs.size() << '\n';
    }
    return os.str();
}

double AblationTable::mean_accuracy(adapt::AblationKind kind) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : runs) {
        if (r.kind != kind) continue;
        sum += r.result.dev_accuracy;
        ++n;
    }
    if (n == 0) throw ValidationError("no runs for ablation " + std::string(adapt::to_string(kind)));
    return sum / n;
}

AblationTable run_ablations(const ExperimentConfig& config, const Environment& env,
                            std::span<const std::uint64_t> seeds, std::span<const adapt::AblationKind> kinds) {
    if (seeds.empty()) throw ValidationError("ablations need at least one seed");
    AblationTable table;
    for (auto seed : seeds) {
        auto cfg = with_seed(config, seed);
        const auto report = run_importance(cfg, task_model(env, cfg.seeds), env.train);
        const auto plan = adapt::select_retained(report, cfg.threshold);
        for (auto kind : kinds) {
            cfg.ablation = kind;
            auto trained = train_with_plan(cfg, env, plan);
            if (kind == adapt::AblationKind::full_lora) {
                const auto view = [&](const importance::ImportanceReport& r, adapt::Keep keep) {
                    return masked_accuracy(env, trained, adapt::inference_mask(trained.topology, r, keep, plan));
                };
                const auto ranked = trained_importance(env, trained, report);
                table.keep_large.push_back(view(ranked, adapt::Keep::large));
                table.keep_small.push_back(view(ranked, adapt::Keep::small));
                table.keep_large_warmup.push_back(view(report, adapt::Keep::large));
                table.keep_small_warmup.push_back(view(report, adapt::Keep::small));
            }
            table.runs.push_back({kind, seed, std::move(trained.result)});
        }
    }
    return table;
}

std::string ablation_csv(const AblationTable& table) {
    auto os = csv_stream();
    os << "ablation,seed,k_query,k_value,lora_params,dev_accuracy\n";
    std::vector<adapt::AblationKind> kinds;
    for (const auto& r : table.runs) {
        if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
        os << adapt::to_string(r.kind) << ',' << r.seed << ',' << r.result.retained.at(MatrixKind::query) << ','
           << r.result.retained.at(MatrixKind::value) << ',' << r.result.lora_params << ','
           << r.result.dev_accuracy << '\n';
    }
    for (auto kind : kinds) {
        double params = 0.0;
        int n = 0;
        for (const auto& r : table.runs) {
            if (r.kind != kind) continue;
            params += static_cast<double>(r.result.lora_params);
            ++n;
        }
        os << adapt::to_string(kind) << ",mean,,," << params / n << ',' << table.mean_accuracy(kind) << '\n';
    }
    return os.str();
}

std::string keep_csv(const AblationTable& table) {
    auto os = csv_stream();
    os << "seed,keep_large,keep_small,keep_large_warmup,keep_small_warmup\n";
    std::vector<std::uint64_t> seeds;
    for (const auto& r : table.runs)
        if (r.kind == adapt::AblationKind::full_lora) seeds.push_back(r.seed);
    for (std::size_t i = 0; i < table.keep_large.size(); ++i)
        os << seeds.at(i) << ',' << table.keep_large[i] << ',' << table.keep_small[i] << ','
           << table.keep_large_warmup[i] << ',' << table.keep_small_warmup[i] << '\n';
    return os.str();
}

std::vector<AlphaPair> sweep_alpha(const ExperimentConfig& config, const Environment& env,
                                   std::span<const double> ratios, std::span<const std::uint64_t> seeds) {
    if (ratios.size() < 2) throw ValidationError("alpha sweep needs at least two ratios");
    for (double r : ratios)
        if (!(r > 0.0 && r < 1.0)) throw ValidationError("ratios must lie in (0, 1)");
    const auto batch = static_cast<long>(config.finetune.batch_size);
    auto steps_per_epoch = [&](double ratio) {
        importance::SamplingConfig s{ratio, 0};
        const auto n = static_cast<long>(importance::stratified_sample(env.train, s).size());
        return (n + batch - 1) / batch;
    };
    const double smallest = *std::min_element(ratios.begin(), ratios.end());
    const long budget = config.warmup_epochs * steps_per_epoch(smallest);

    std::vector<AlphaPair> out;
    for (auto seed : seeds) {
        auto cfg = with_seed(config, seed);
        std::vector<importance::ImportanceReport> reports;
        for (double ratio : ratios) {
            cfg.alpha = ratio;
            cfg.warmup_max_steps = budget;
            const long per_epoch = steps_per_epoch(ratio);
            cfg.warmup_epochs = static_cast<int>(std::max(1L, (budget + per_epoch - 1) / per_epoch));
            reports.push_back(run_importance(cfg, task_model(env, cfg.seeds), env.train));
        }
        const auto matrix = importance::rank_stability(reports);
        for (auto kind : lora::kMatrixKinds)
            for (std::size_t i = 0; i < ratios.size(); ++i)
                for (std::size_t j = i + 1; j < ratios.size(); ++j)
                    out.push_back({seed, kind, ratios[i], ratios[j], matrix.at(kind)[i][j]});
    }
    return out;
}

std::string alpha_csv(const std::vector<AlphaPair>& pairs) {
    auto os = csv_stream();
    os << "seed,group,ratio_a,ratio_b,spearman\n";
    for (const auto& p : pairs)
        os << p.seed << ',' << lora::to_string(p.group) << ',' << p.ratio_a << ',' << p.ratio_b << ',' << p.spearman
           << '\n';
    return os.str();
}

std::vector<HeatmapCell> importance_cells(const ExperimentConfig& config, const Environment& env,
                                          std::span<const std::uint64_t> seeds,
                                          std::vector<importance::ImportanceReport>* reports) {
    std::vector<HeatmapCell> cells;
    const std::string task(data::to_string(config.task.family));
    for (auto seed : seeds) {
        auto cfg = with_seed(config, seed);
        auto report = run_importance(cfg, task_model(env, cfg.seeds), env.train);
        for (const auto& [kind, gi] : report.groups)
            for (std::size_t l = 0; l < gi.importance.size(); ++l)
                cells.push_back({task, seed, kind, static_cast<int>(l), gi.g[l], gi.importance[l]});
        if (reports) reports->push_back(std::move(report));
    }
    return cells;
}

std::string heatmap_csv(const std::vector<HeatmapCell>& cells) {
    auto os = csv_stream();
    os << "task,seed,group,layer,importance,g\n";
    for (const auto& c : cells)
        os << c.task << ',' << c.seed << ',' << lora::to_string(c.group) << ',' << c.layer << ',' << c.importance << ','
           << c.g << '\n';
    return os.str();
}

}  // namespace loradrop::harness
