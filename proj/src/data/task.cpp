// Copyright 2026 The loradrop Authors
// SPDX-License-Identifier: Apache-2.0

#include "loradrop/data/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "loradrop/core/error.hpp"
#include "loradrop/core/rng.hpp"

namespace loradrop::data {

using core::Rng;

std::string_view to_string(TaskFamily family) {
    switch (family) {
        case TaskFamily::token_count: return "token-count";
        case TaskFamily::pairwise_order: return "pairwise-order";
        case TaskFamily::nested_dependency: return "nested-dependency";
    }
    return "unknown";
}

TaskFamily task_family_from_string(std::string_view name) {
    if (name == "token-count") return TaskFamily::token_count;
    if (name == "pairwise-order") return TaskFamily::pairwise_order;
    if (name == "nested-dependency") return TaskFamily::nested_dependency;
    throw ValidationError("unknown task family '" + std::string(name) + "'");
}

namespace {

int marker_pairs(int num_classes) {
    int pairs = 0;
    while ((1 << pairs) < num_classes) ++pairs;
    return pairs;
}

int marker_offset(const TaskSpec& spec) { return spec.variant * 2 * marker_pairs(spec.num_classes); }

bool is_marker(const TaskSpec& spec, int token) {
    const int lo = marker_offset(spec);
    return token >= lo && token < lo + 2 * marker_pairs(spec.num_classes);
}

int open_token(const TaskSpec& spec) { return 2 * spec.variant; }
int close_token(const TaskSpec& spec) { return 2 * spec.variant + 1; }

std::vector<int> filler_tokens(const TaskSpec& spec) {
    std::vector<int> out;
    for (int t = 0; t < spec.vocab_size; ++t) {
        const bool reserved = spec.family == TaskFamily::pairwise_order
                                  ? is_marker(spec, t)
                                  : (t == open_token(spec) || t == close_token(spec));
        if (!reserved) out.push_back(t);
    }
    return out;
}

}  // namespace

void TaskSpec::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("infeasible task spec: " + msg); };
    if (vocab_size < 2 || seq_len < 1 || num_classes < 2) fail("vocab >= 2, seq_len >= 1, classes >= 2 required");
    if (train_size < 1 || dev_size < 0) fail("train_size must be positive and dev_size non-negative");
    if (variant < 0 || variant > 1) fail("variant must be 0 or 1");
    if (!class_balance.empty()) {
        if (class_balance.size() != static_cast<std::size_t>(num_classes)) fail("class_balance length != num_classes");
        for (double w : class_balance)
            if (!(w > 0.0) || !std::isfinite(w)) fail("class weights must be positive");
    }
    switch (family) {
        case TaskFamily::token_count:
            if (seq_len < 2) fail("token-count needs seq_len >= 2");
            for (int c = 0; c < num_classes; ++c) {
                bool covered = false;
                for (int t = 0; t < vocab_size && !covered; ++t) covered = token_class(*this, t) == c;
                if (!covered) fail("token-count needs at least one token per class");
            }
            break;
        case TaskFamily::pairwise_order: {
            const int pairs = marker_pairs(num_classes);
            if ((1 << pairs) != num_classes) fail("pairwise-order needs a power-of-two class count");
            if (2 * pairs > seq_len) fail("pairwise-order: sequence too short for " + std::to_string(2 * pairs) + " markers");
            if (marker_offset(*this) + 2 * pairs >= vocab_size) fail("pairwise-order: vocabulary too small for markers plus filler");
            break;
        }
        case TaskFamily::nested_dependency:
            if (2 * num_classes > seq_len) fail("nested-dependency needs seq_len >= 2 * num_classes");
            if (close_token(*this) + 1 >= vocab_size) fail("nested-dependency: vocabulary too small for brackets plus filler");
            break;
    }
}

TaskSpec TaskSpec::generic_variant() const {
    TaskSpec g = *this;
    g.variant = 1;
    return g;
}

std::vector<double> TaskSpec::normalized_balance() const {
    std::vector<double> w = class_balance;
    if (w.empty()) w.assign(static_cast<std::size_t>(num_classes), 1.0);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_name) const {
    Dataset out{spec, std::move(split_name), {}};
    out.examples.reserve(indices.size());
    for (auto i : indices) out.examples.push_back(examples.at(i));
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(spec.num_classes), 0);
    for (const auto& e : examples) ++counts.at(static_cast<std::size_t>(e.label));
    return counts;
}

int token_class(const TaskSpec& spec, int token) {
    const int c = spec.num_classes;
    return spec.variant == 0 ? token % c : (token + token / c) % c;
}

int label_for(const TaskSpec& spec, std::span<const int> tokens) {
    switch (spec.family) {
        case TaskFamily::token_count: {
            std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
            for (int t : tokens) ++counts[static_cast<std::size_t>(token_class(spec, t))];
            return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        }
        case TaskFamily::pairwise_order: {
            // Bit p is set when the second marker of pair p occurs before the first.
            const int pairs = marker_pairs(spec.num_classes);
            const int offset = marker_offset(spec);
            int label = 0;
            for (int p = 0; p < pairs; ++p) {
                auto first = std::find(tokens.begin(), tokens.end(), offset + 2 * p);
                auto second = std::find(tokens.begin(), tokens.end(), offset + 2 * p + 1);
                if (second < first) label |= 1 << p;
            }
            return label;
        }
        case TaskFamily::nested_dependency: {
            int depth = 0, deepest = 0;
            for (int t : tokens) {
                if (t == open_token(spec)) deepest = std::max(deepest, ++depth);
                else if (t == close_token(spec) && depth > 0) --depth;
            }
            return std::clamp(deepest, 1, spec.num_classes) - 1;
        }
    }
    return 0;
}

namespace {

std::vector<int> make_token_count(const TaskSpec& spec, int label, Rng& rng) {
    const int S = spec.seq_len, C = spec.num_classes;
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(C));
    for (int t = 0; t < spec.vocab_size; ++t) by_class[static_cast<std::size_t>(token_class(spec, t))].push_back(t);
    auto draw = [&](int c) {
        const auto& pool = by_class[static_cast<std::size_t>(c)];
        return pool[rng.below(pool.size())];
    };
    const int lo = S / C + 1;
    const int hi = std::min(S, lo + std::max(1, S / 4));
    for (;;) {
        const int own = lo + static_cast<int>(rng.below(static_cast<std::size_t>(hi - lo + 1)));
        std::vector<int> tokens;
        std::vector<int> counts(static_cast<std::size_t>(C), 0);
        for (int i = 0; i < own; ++i) tokens.push_back(draw(label));
        counts[static_cast<std::size_t>(label)] = own;
        bool ok = true;
        for (int i = own; i < S; ++i) {
            int c = static_cast<int>(rng.below(static_cast<std::size_t>(C - 1)));
            if (c >= label) ++c;
            if (++counts[static_cast<std::size_t>(c)] >= own) ok = false;
            tokens.push_back(draw(c));
        }
        if (!ok) continue;
        rng.shuffle(tokens.begin(), tokens.end());
        return tokens;
    }
}

std::vector<std::size_t> sorted_positions(std::size_t count, std::size_t seq, Rng& rng) {
    std::vector<std::size_t> pos(seq);
    std::iota(pos.begin(), pos.end(), 0);
    rng.shuffle(pos.begin(), pos.end());
    pos.resize(count);
    std::sort(pos.begin(), pos.end());
    return pos;
}

std::vector<int> fill_with(const std::vector<int>& fillers, std::size_t seq, Rng& rng) {
    std::vector<int> tokens(seq);
    for (auto& t : tokens) t = fillers[rng.below(fillers.size())];
    return tokens;
}

std::vector<int> make_pairwise_order(const TaskSpec& spec, int label, Rng& rng) {
    const int pairs = marker_pairs(spec.num_classes);
    const int offset = marker_offset(spec);
    auto tokens = fill_with(filler_tokens(spec), static_cast<std::size_t>(spec.seq_len), rng);
    std::vector<std::size_t> pos(static_cast<std::size_t>(spec.seq_len));
    std::iota(pos.begin(), pos.end(), 0);
    rng.shuffle(pos.begin(), pos.end());
    for (int p = 0; p < pairs; ++p) {
        std::size_t a = pos[2 * static_cast<std::size_t>(p)], b = pos[2 * static_cast<std::size_t>(p) + 1];
        if (a > b) std::swap(a, b);
        const bool swapped = (label >> p) & 1;
        tokens[a] = offset + 2 * p + (swapped ? 1 : 0);
        tokens[b] = offset + 2 * p + (swapped ? 0 : 1);
    }
    return tokens;
}

std::vector<int> make_nested(const TaskSpec& spec, int label, Rng& rng) {
    const int depth = label + 1;
    const int max_pairs = std::min(spec.seq_len / 2, 2 * depth + 1);
    const int pairs = depth + static_cast<int>(rng.below(static_cast<std::size_t>(max_pairs - depth + 1)));
    std::vector<int> brackets;
    for (;;) {
        brackets.clear();
        int opens = pairs, closes = pairs, h = 0, deepest = 0;
        while (opens + closes > 0) {
            const bool can_open = opens > 0 && h < depth;
            const bool can_close = h > 0;
            bool open = can_open && (!can_close || rng.uniform() < 0.5);
            if (open) {
                --opens;
                deepest = std::max(deepest, ++h);
                brackets.push_back(open_token(spec));
            } else {
                --closes;
                --h;
                brackets.push_back(close_token(spec));
            }
        }
        if (deepest == depth) break;
    }
    auto tokens = fill_with(filler_tokens(spec), static_cast<std::size_t>(spec.seq_len), rng);
    auto pos = sorted_positions(brackets.size(), static_cast<std::size_t>(spec.seq_len), rng);
    for (std::size_t i = 0; i < pos.size(); ++i) tokens[pos[i]] = brackets[i];
    return tokens;
}

std::vector<int> make_tokens(const TaskSpec& spec, int label, Rng& rng) {
    switch (spec.family) {
        case TaskFamily::token_count: return make_token_count(spec, label, rng);
        case TaskFamily::pairwise_order: return make_pairwise_order(spec, label, rng);
        case TaskFamily::nested_dependency: return make_nested(spec, label, rng);
    }
    return {};
}

// Exact per-class quotas (largest remainder), shuffled.
std::vector<int> label_schedule(const TaskSpec& spec, int n, Rng& rng) {
    const auto w = spec.normalized_balance();
    std::vector<int> quota(w.size());
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t c = 0; c < w.size(); ++c) {
        const double exact = w[c] * n;
        quota[c] = static_cast<int>(std::floor(exact));
        assigned += quota[c];
        rem.emplace_back(exact - quota[c], c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[rem[i % rem.size()].second];
    std::vector<int> labels;
    for (std::size_t c = 0; c < quota.size(); ++c) labels.insert(labels.end(), static_cast<std::size_t>(quota[c]), static_cast<int>(c));
    rng.shuffle(labels.begin(), labels.end());
    return labels;
}

}  // namespace

std::pair<Dataset, Dataset> generate(const TaskSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    Rng rng_train = root.split("train"), rng_dev = root.split("dev");
    Dataset train{spec, "train", {}}, dev{spec, "dev", {}};

    std::set<std::vector<int>> seen;
    for (int label : label_schedule(spec, spec.train_size, rng_train)) {
        auto tokens = make_tokens(spec, label, rng_train);
        seen.insert(tokens);
        train.examples.push_back({static_cast<int>(train.examples.size()), std::move(tokens), label});
    }
    for (int label : label_schedule(spec, spec.dev_size, rng_dev)) {
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) {
                throw ValidationError("infeasible task spec: cannot draw a dev example disjoint from train");
            }
            auto tokens = make_tokens(spec, label, rng_dev);
            if (seen.count(tokens)) continue;
            dev.examples.push_back({static_cast<int>(dev.examples.size()), std::move(tokens), label});
            break;
        }
    }
    return {std::move(train), std::move(dev)};
}

void validate_for_model(const Dataset& dataset, int vocab_size, int max_seq_len, int num_classes) {
    for (const auto& e : dataset.examples) {
        if (static_cast<int>(e.tokens.size()) > max_seq_len) {
            throw ValidationError("example " + std::to_string(e.id) + " has " + std::to_string(e.tokens.size()) +
                                  " tokens, model accepts at most " + std::to_string(max_seq_len));
        }
        for (int t : e.tokens) {
            if (t < 0 || t >= vocab_size) {
                throw ValidationError("example " + std::to_string(e.id) + " uses token " + std::to_string(t) +
                                      " outside a vocabulary of " + std::to_string(vocab_size));
            }
        }
        if (e.label < 0 || e.label >= num_classes) {
            throw ValidationError("example " + std::to_string(e.id) + " has label " + std::to_string(e.label) +
                                  " outside " + std::to_string(num_classes) + " classes");
        }
    }
}

}  // namespace loradrop::data

namespace loradrop::data {

std::string fingerprint(const Dataset& dataset) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](std::int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xffU;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& ex : dataset.examples) {
        feed(ex.id);
        feed(static_cast<std::int64_t>(ex.tokens.size()));
        for (int t : ex.tokens) feed(t);
        feed(ex.label);
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xfU];
    return out;
}

}  // namespace loradrop::data
