// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moelens/model.hpp"

namespace moelens {

struct PlantedDomain {
    std::string name;
    std::vector<TokenId> tokens;
    /// Vocabulary id used as the class label for this domain in synthetic tasks.
    std::optional<TokenId> label_token;
};

/// Knobs for the planted construction. Defaults produce the reference model
/// used by the acceptance suite.
struct PlantedTuning {
    double driver_gain = 1.0;       // norm of the driver's output along the lever direction
    double driver_routing = 5.25;   // gate alignment of drivers with the trigger feature
    double general_routing = 4.5;   // routing prior of the per-layer general expert
    double routing_noise = 0.3;     // scale of token-specific gate logits
    double label_signal = 0.5;      // label push written by domain and driver experts
    double label_offset = 1.6;      // mean handicap of the correct label in embeddings
    double label_noise = 0.6;       // spread of per-token label handicaps
    // Per domain, these fractions of tokens are full triggers (strength 1) and
    // partial triggers (strength uniform in [partial_lo, partial_hi]); the
    // rest are plain (strength 0).
    double trigger_full_fraction = 0.4;
    double trigger_partial_fraction = 0.25;
    double trigger_partial_lo = 0.73;
    double trigger_partial_hi = 0.84;
    double background_scale = 1.0;  // scale of non-planted expert outputs
};

struct PlantedSpec {
    ModelSpec base;
    std::vector<PlantedDomain> domains;
    std::map<std::string, std::vector<ExpertRef>> domain_experts;
    std::vector<ExpertRef> driver_experts;
    double gate_bias_strength = 6.0;
    PlantedTuning tuning;

    /// Throws Configuration on overlapping or empty domains, indices outside
    /// the base spec, or the same expert planted for two domains.
    void validate() const;

    bool has_plants() const;
};

/// Ground truth recorded alongside a planted model.
struct GroundTruth {
    std::vector<PlantedDomain> domains;
    std::map<std::string, std::vector<ExpertRef>> domain_experts;
    std::vector<ExpertRef> driver_experts;
    std::vector<ExpertRef> general_experts;
    std::vector<double> trigger_strength;  // per vocabulary id, 0 outside domains

    std::vector<ExpertRef> all_domain_experts() const;
};

/// Residual-stream layout of a planted model. Every planted coordinate owns a
/// dedicated basis direction; `content` directions carry token-specific
/// features read by the gates, `scratch` directions receive the output of
/// non-planted experts.
struct PlantedLayout {
    std::size_t constant = 0;
    std::vector<std::size_t> domain;  // one per domain
    std::size_t trigger = 0;
    std::vector<std::size_t> label;   // one per domain
    std::size_t lever = 0;
    std::vector<std::size_t> scratch;
    std::vector<std::size_t> content;

    static PlantedLayout make(std::size_t d_model, std::size_t n_domains);
};

/// Builds the planted model. Without any plants the result is exactly
/// init_random(spec.base).
std::pair<MoEModel, GroundTruth> build_planted_model(const PlantedSpec& spec);

/// Reference configuration: 4 layers, 8 experts, top-2, two domains with one
/// domain expert each per layer and one driver per layer.
PlantedSpec default_planted_spec();

// JSON serialisation of planted specs and ground truth.
std::string planted_spec_to_json(const PlantedSpec& spec);
PlantedSpec planted_spec_from_json(const std::string& text);
std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const std::string& text);

}  // namespace moelens
