// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelens/causal.hpp"
#include "moelens/domain_metrics.hpp"
#include "moelens/intervention.hpp"
#include "moelens/token_analysis.hpp"

namespace moelens {

struct PipelineConfig {
    std::string model_path;
    std::string corpus_path;
    std::string task_path;
    std::string out_dir;
    double rho = kDefaultRho;
    double sigma_max = kDefaultSigmaMax;
    double quantile = kDefaultQuantile;
    std::uint64_t min_count = kDefaultMinCount;
    double magnitude = 1.0;
    int sign = -1;
    std::uint64_t seed = 0;
    double up_factor = 1.2;
    double down_factor = 0.8;

    /// One-line settings echo written at the top of every tabular output.
    std::string provenance(const std::string& command = "pipeline") const;
};

struct PipelineResult {
    std::vector<std::string> artifacts;  // file names inside out_dir, in write order
    std::vector<ExpertRef> domain_experts;
    std::vector<ExpertRef> drivers;
    std::vector<std::string> warnings;
    std::vector<EvalReport> sweep;
};

inline const std::vector<std::string> kPipelineArtifacts = {
    "trace.jsonl",        "scores.csv",       "taxonomy.csv",    "causal_matrix.csv", "drivers.csv",
    "causal_rate.csv",    "position_bins.csv", "association.csv", "intervention.csv"};
inline const std::vector<std::string> kPipelinePlots = {"cwas.svg", "causal_rate.svg", "position_bins.svg"};

/// Builds the four standard plans: domain experts scaled up and down, then
/// drivers scaled up and down.
std::vector<InterventionPlan> standard_plans(const std::vector<ExpertRef>& domain_experts,
                                             const std::vector<ExpertRef>& drivers, double up = 1.2,
                                             double down = 0.8);

/// Runs every analysis stage and writes the artifacts and plots. A failing
/// stage raises its original error category with the stage named.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace moelens
