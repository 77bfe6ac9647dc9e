// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moelens/matrix.hpp"

namespace moelens {

using TokenId = std::uint32_t;

struct ModelSpec {
    std::uint32_t n_layers = 1;
    std::uint32_t n_experts = 1;
    std::uint32_t top_k = 1;
    std::uint32_t d_model = 1;
    std::uint32_t d_ff = 1;
    std::uint32_t vocab_size = 1;
    std::uint64_t seed = 0;

    /// Throws Configuration when a dimension is zero or top_k > n_experts.
    void validate() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// A (layer, expert) coordinate.
struct ExpertRef {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;

    friend auto operator<=>(const ExpertRef&, const ExpertRef&) = default;
};

std::string to_string(const ExpertRef& ref);

struct ExpertFfn {
    Matrix w1;  // d_ff x d_model
    Matrix w2;  // d_model x d_ff

    friend bool operator==(const ExpertFfn&, const ExpertFfn&) = default;
};

struct MoELayer {
    Matrix gate;  // n_experts x d_model
    std::vector<ExpertFfn> experts;

    friend bool operator==(const MoELayer&, const MoELayer&) = default;
};

/// Name of the expert nonlinearity, stamped into checkpoints and traces.
inline constexpr const char* kNonlinearity = "silu";

double silu(double x) noexcept;
double silu_grad(double x) noexcept;

struct MoEModel {
    ModelSpec spec;
    Matrix embed;    // vocab x d_model
    std::vector<MoELayer> layers;
    Matrix unembed;  // vocab x d_model

    /// Zero-initialised model with shapes matching `spec`.
    static MoEModel zeros(const ModelSpec& spec);

    /// Checks shapes against the model shape and that every weight is finite.
    void validate() const;

    std::string descriptor() const;

    friend bool operator==(const MoEModel&, const MoEModel&) = default;
};

/// Gaussian initialisation from spec.seed. Weights are rounded to float32 so a
/// checkpoint round trip is lossless.
MoEModel init_random(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Gate modification hooks.

struct NoModifier {};

/// Adds sign * magnitude to one expert's gate logit before top-k selection.
struct Perturb {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;
    double magnitude = 1.0;
    int sign = -1;
};

struct ScaleEdit {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;
    double factor = 1.0;
};

/// Multiplies listed experts' gate logits before top-k selection.
struct Scale {
    std::vector<ScaleEdit> edits;
};

using GateModifier = std::variant<NoModifier, Perturb, Scale>;

/// Throws Configuration on out-of-range indices and InvalidInput on bad
/// magnitudes, signs or factors.
void validate_modifier(const GateModifier& modifier, const ModelSpec& spec);

/// Applies the modifier to the logits of `layer` in place.
void apply_modifier(const GateModifier& modifier, std::uint32_t layer, std::span<double> logits);

// ---------------------------------------------------------------------------
// Routing.

struct TopK {
    std::vector<std::uint32_t> ids;  // descending by logit
    std::vector<double> probs;       // softmax over the selected logits only
};

/// Selects the k largest logits (lowest index wins ties) and renormalises
/// over that set.
TopK topk_gate(std::span<const double> logits, std::size_t k);

struct LayerRouting {
    std::vector<double> logits;  // after modification
    TopK topk;
};

struct ForwardResult {
    std::vector<std::vector<double>> distributions;  // [position][vocab]
    std::vector<std::vector<LayerRouting>> routing;  // [position][layer]
};

/// Runs the stacked MoE blocks over each position. Positions do not interact.
ForwardResult forward(const MoEModel& model, std::span<const TokenId> tokens,
                      const GateModifier& modifier = NoModifier{});

/// Single-token forward. Writes routing into `routing` when non-null and
/// returns the next-token distribution. Does not validate the modifier.
std::vector<double> forward_token(const MoEModel& model, TokenId token, const GateModifier& modifier,
                                  std::vector<LayerRouting>* routing = nullptr);

}  // namespace moelens
