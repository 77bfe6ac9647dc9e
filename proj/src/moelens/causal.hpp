// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moelens/corpus.hpp"
#include "moelens/model.hpp"
#include "moelens/trace.hpp"

namespace moelens {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kDefaultQuantile = 0.05;

/// sum_v P_v log2(P_v / max(Q_v, 1e-12)); P entries below 1e-12 contribute 0.
/// Throws InvalidInput on length mismatch, negative entries, or sums off 1 by
/// more than 1e-6.
double kl_divergence(std::span<const double> P, std::span<const double> Q);

/// Mean per-position KL between clean and Perturb(layer, expert, magnitude,
/// sign) next-token distributions over the corpus.
double causal_effect(const MoEModel& model, const Corpus& corpus, std::uint32_t layer, std::uint32_t expert,
                     double magnitude = 1.0, int sign = -1);

struct CausalCell {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;
    double ce = 0.0;
    std::uint64_t n_examples = 0;
};

struct CausalEffectMatrix {
    std::uint32_t n_layers = 0;
    std::uint32_t n_experts = 0;
    double magnitude = 1.0;
    int sign = -1;
    std::vector<CausalCell> cells;  // ordered by (layer, expert)

    const CausalCell& at(std::uint32_t layer, std::uint32_t expert) const;
};

CausalEffectMatrix causal_effect_matrix(const MoEModel& model, const Corpus& corpus, double magnitude = 1.0,
                                        int sign = -1);

struct DriverSet {
    double quantile = kDefaultQuantile;
    std::vector<double> thresholds;  // per layer
    std::vector<CausalCell> members;  // ordered by (layer, expert)
    std::vector<std::string> warnings;

    std::vector<ExpertRef> refs() const;
};

/// Per layer, experts whose CE reaches the (1-q) quantile (linear
/// interpolation between order statistics). Layers where every CE is equal
/// contribute no drivers and a warning.
DriverSet identify_drivers(const CausalEffectMatrix& matrix, double q = kDefaultQuantile);

/// Per layer, the fraction of trace tokens whose top-k set meets the drivers.
std::vector<double> causal_rate(const RoutingTrace& trace, const std::vector<ExpertRef>& drivers);

}  // namespace moelens
