// SPDX-License-Identifier: Apache-2.0

#include "moelens/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "moelens/error.hpp"

namespace moelens {

std::vector<double> scale_gate_logits(std::span<const double> z, const std::vector<ScaleEdit>& edits,
                                      std::uint32_t layer) {
    std::vector<double> out(z.begin(), z.end());
    for (const auto& e : edits) {
        if (e.layer != layer) continue;
        require(e.expert < z.size(), ErrorCode::Configuration,
                "edit expert " + std::to_string(e.expert) + " out of range (" + std::to_string(z.size()) +
                    " experts)");
        out[e.expert] *= e.factor;
    }
    return out;
}

void InterventionPlan::validate(const ModelSpec& spec) const {
    std::set<ExpertRef> seen;
    for (const auto& e : edits) {
        require(seen.insert({e.layer, e.expert}).second, ErrorCode::Configuration,
                "plan '" + label + "' edits expert " + to_string(ExpertRef{e.layer, e.expert}) + " twice");
    }
    try {
        validate_modifier(Scale{edits}, spec);
    } catch (const Error& e) {
        fail(e.code(), "plan '" + label + "': " + e.what());
    }
}

double weighted_f1(std::span<const TokenId> predictions, std::span<const TokenId> golds) {
    require(predictions.size() == golds.size(), ErrorCode::InvalidInput,
            "predictions and golds differ in length");
    require(!golds.empty(), ErrorCode::InvalidInput, "weighted F1 of an empty set");
    std::map<TokenId, ClassCounts> counts;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        ++counts[golds[i]].support;
        ++counts[predictions[i]].predicted;
        if (predictions[i] == golds[i]) ++counts[golds[i]].correct;
    }
    double total = 0.0;
    for (const auto& [label, c] : counts) {
        if (c.support == 0) continue;
        const double denom = static_cast<double>(c.support + c.predicted);
        const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(c.correct) / denom : 0.0;
        total += static_cast<double>(c.support) * f1;
    }
    return total / static_cast<double>(golds.size());
}

EvalReport evaluate(const MoEModel& model, const Task& task, const InterventionPlan& plan) {
    model.validate();
    task.validate(model.spec.vocab_size);
    plan.validate(model.spec);
    const GateModifier modifier = plan.edits.empty() ? GateModifier{NoModifier{}} : GateModifier{Scale{plan.edits}};

    EvalReport report;
    report.label = plan.label;
    report.n_examples = task.examples.size();
    std::vector<TokenId> preds, golds;
    std::vector<std::uint64_t> negative(plan.edits.size(), 0);
    std::uint64_t n_tokens = 0;
    std::vector<LayerRouting> routing;

    for (const auto& ex : task.examples) {
        // Positions do not interact, so the last position's distribution only
        // needs the last token.
        const auto dist = forward_token(model, ex.tokens.back(), modifier, &routing);
        ++n_tokens;
        for (std::size_t i = 0; i < plan.edits.size(); ++i)
            if (routing[plan.edits[i].layer].logits[plan.edits[i].expert] < 0.0) ++negative[i];
        TokenId best = task.labels.front();
        for (TokenId l : task.labels)
            if (dist[l] > dist[best]) best = l;
        preds.push_back(best);
        golds.push_back(ex.gold);
    }
    for (TokenId l : task.labels) report.per_class[l];
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++report.per_class[golds[i]].support;
        ++report.per_class[preds[i]].predicted;
        if (preds[i] == golds[i]) {
            ++report.per_class[golds[i]].correct;
            ++report.n_correct;
        }
    }
    report.accuracy = static_cast<double>(report.n_correct) / static_cast<double>(report.n_examples);
    report.weighted_f1 = weighted_f1(preds, golds);
    for (std::size_t i = 0; i < plan.edits.size(); ++i) {
        const double frac = static_cast<double>(negative[i]) / static_cast<double>(n_tokens);
        if (frac > 0.10) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * frac);
            report.caveats.push_back("expert " + to_string(ExpertRef{plan.edits[i].layer, plan.edits[i].expert}) +
                                     " had negative gate logits on " + buf +
                                     " of tokens; scaling moves those logits the opposite way");
        }
    }
    return report;
}

std::vector<EvalReport> sweep(const MoEModel& model, const Task& task, const std::vector<InterventionPlan>& plans) {
    require(!plans.empty(), ErrorCode::InvalidInput, "sweep needs at least one plan");
    std::vector<EvalReport> out;
    out.push_back(evaluate(model, task, InterventionPlan{"baseline", {}}));
    const double base_acc = out.front().accuracy;
    const double base_f1 = out.front().weighted_f1;
    for (const auto& p : plans) {
        auto r = evaluate(model, task, p);
        r.delta_accuracy = r.accuracy - base_acc;
        r.delta_weighted_f1 = r.weighted_f1 - base_f1;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<InterventionPlan> parse_plans(const std::string& text, const std::string& source) {
    std::vector<InterventionPlan> plans;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto where = source + ":" + std::to_string(lineno);
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            require(line.back() == ']' && line.size() > 2, ErrorCode::Malformed, where + ": bad plan header");
            plans.push_back({line.substr(1, line.size() - 2), {}});
            continue;
        }
        require(!plans.empty(), ErrorCode::Malformed, where + ": edit before any '[label]' header");
        std::istringstream fields(line);
        long long layer = -1, expert = -1;
        double factor = 0.0;
        std::string extra;
        require(static_cast<bool>(fields >> layer >> expert >> factor) && !(fields >> extra) && layer >= 0 &&
                    expert >= 0,
                ErrorCode::Malformed, where + ": expected '<layer> <expert> <factor>'");
        require(std::isfinite(factor) && factor > 0.0, ErrorCode::Malformed, where + ": factor must be > 0");
        auto& edits = plans.back().edits;
        const auto l = static_cast<std::uint32_t>(layer), e = static_cast<std::uint32_t>(expert);
        require(std::none_of(edits.begin(), edits.end(),
                             [&](const ScaleEdit& s) { return s.layer == l && s.expert == e; }),
                ErrorCode::Malformed, where + ": expert listed twice in plan '" + plans.back().label + "'");
        edits.push_back({l, e, factor});
    }
    return plans;
}

std::vector<InterventionPlan> read_plans(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_plans(ss.str(), path);
}

std::string plans_to_string(const std::vector<InterventionPlan>& plans) {
    std::string out;
    char buf[64];
    for (const auto& p : plans) {
        out += "[" + p.label + "]\n";
        for (const auto& e : p.edits) {
            std::snprintf(buf, sizeof buf, "%u %u %.17g\n", e.layer, e.expert, e.factor);
            out += buf;
        }
    }
    return out;
}

}  // namespace moelens
