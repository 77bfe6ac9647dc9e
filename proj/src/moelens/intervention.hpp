// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "moelens/corpus.hpp"
#include "moelens/model.hpp"

namespace moelens {

/// z'_i = factor_i * z_i for edits on `layer`, other entries unchanged.
/// Throws Configuration when an edit names an expert outside z.
std::vector<double> scale_gate_logits(std::span<const double> z, const std::vector<ScaleEdit>& edits,
                                      std::uint32_t layer);

struct InterventionPlan {
    std::string label;
    std::vector<ScaleEdit> edits;

    /// At most one edit per (layer, expert), positive factors, indices inside
    /// the model shape.
    void validate(const ModelSpec& spec) const;
};

struct ClassCounts {
    std::uint64_t support = 0;    // gold count
    std::uint64_t predicted = 0;  // prediction count
    std::uint64_t correct = 0;
};

struct EvalReport {
    std::string label;
    std::uint64_t n_examples = 0;
    std::uint64_t n_correct = 0;
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double delta_accuracy = 0.0;
    double delta_weighted_f1 = 0.0;
    std::map<TokenId, ClassCounts> per_class;
    std::vector<std::string> caveats;
};

/// Support-weighted mean of per-class F1 over the classes present in `golds`.
double weighted_f1(std::span<const TokenId> predictions, std::span<const TokenId> golds);

/// Predicts each example by the argmax over the task's label tokens of the
/// next-token distribution at its last position (first label wins ties).
EvalReport evaluate(const MoEModel& model, const Task& task, const InterventionPlan& plan);

/// Baseline first (label "baseline"), then one report per plan with deltas
/// against the baseline.
std::vector<EvalReport> sweep(const MoEModel& model, const Task& task, const std::vector<InterventionPlan>& plans);

// Plan file: '[label]' starts a plan, following lines are '<layer> <expert>
// <factor>' edits; blank lines and '#' comments are ignored.
std::vector<InterventionPlan> read_plans(const std::string& path);
std::vector<InterventionPlan> parse_plans(const std::string& text, const std::string& source = "<plans>");
std::string plans_to_string(const std::vector<InterventionPlan>& plans);

}  // namespace moelens
