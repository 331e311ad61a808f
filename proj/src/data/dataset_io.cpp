// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/data/dataset_io.hpp"

#include <sstream>

#include "loradrop/core/error.hpp"
#include "loradrop/core/io.hpp"

namespace loradrop::data {

using nlohmann::json;

json task_spec_to_json(const TaskSpec& spec) {
    return json{{"family", to_string(spec.family)},
                {"vocab_size", spec.vocab_size},
                {"seq_len", spec.seq_len},
                {"num_classes", spec.num_classes},
                {"class_balance", spec.class_balance},
                {"seed", spec.seed},
                {"train_size", spec.train_size},
                {"dev_size", spec.dev_size},
                {"variant", spec.variant}};
}

TaskSpec task_spec_from_json(const json& j) {
    TaskSpec s;
    s.family = task_family_from_string(j.at("family").get<std::string>());
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.seq_len = j.value("seq_len", s.seq_len);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.class_balance = j.value("class_balance", s.class_balance);
    s.seed = j.value("seed", s.seed);
    s.train_size = j.value("train_size", s.train_size);
    s.dev_size = j.value("dev_size", s.dev_size);
    s.variant = j.value("variant", s.variant);
    return s;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ostringstream os;
    os << json{{"format", "loradrop.dataset"},
               {"version", kDatasetFormatVersion},
               {"split", dataset.split},
               {"count", dataset.examples.size()},
               {"task", task_spec_to_json(dataset.spec)}}
              .dump()
       << '\n';
    for (const auto& e : dataset.examples) {
        os << json{{"id", e.id}, {"tokens", e.tokens}, {"label", e.label}}.dump() << '\n';
    }
    core::write_file_atomic(path, os.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::istringstream in(core::read_file(path));
    std::string line;
    auto where = [&](std::size_t lineno) { return path.string() + ":" + std::to_string(lineno); };

    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty dataset file");
    Dataset ds;
    std::size_t expected = 0;
    try {
        const auto header = json::parse(line);
        if (header.at("format") != "loradrop.dataset") throw ParseError(where(1) + ": not a dataset file");
        const int version = header.at("version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw ParseError(where(1) + ": unsupported dataset version " + std::to_string(version));
        }
        ds.split = header.at("split").get<std::string>();
        ds.spec = task_spec_from_json(header.at("task"));
        expected = header.at("count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ParseError(where(1) + ": malformed header: " + e.what());
    }

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto rec = json::parse(line);
            Example e;
            e.id = rec.at("id").get<int>();
            e.tokens = rec.at("tokens").get<std::vector<int>>();
            e.label = rec.at("label").get<int>();
            ds.examples.push_back(std::move(e));
        } catch (const json::exception& e) {
            throw ParseError(where(lineno) + ": malformed record: " + e.what());
        }
    }
    if (ds.examples.size() != expected) {
        throw ParseError(path.string() + ": truncated dataset, header declares " + std::to_string(expected) +
                         " examples, found " + std::to_string(ds.examples.size()));
    }
    return ds;
}

}  // namespace loradrop::data
