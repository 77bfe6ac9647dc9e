// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "moelens/trace.hpp"

namespace moelens {

/// h(p) = -p log2 p - (1-p) log2 (1-p), with h(0) = h(1) = 0.
double binary_entropy(double p) noexcept;

/// Mean binary entropy of the expert's renormalised probability over domain
/// tokens where it is selected; 0 when never selected.
double expert_entropy(const RoutingTrace& trace, std::uint32_t layer, std::uint32_t expert, const std::string& domain);

/// Fraction of domain tokens with the expert in top-k. Throws EmptyDomain
/// when the domain has no tokens.
double activation_rate(const RoutingTrace& trace, std::uint32_t layer, std::uint32_t expert,
                       const std::string& domain);

/// S = (1 - H) * A. Throws InvalidInput outside [0,1].
double cwas(double H, double A);

struct ScoreCell {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;
    std::string domain;
    double H = 0.0;
    double A = 0.0;
    double S = 0.0;
    std::uint64_t support = 0;
};

struct ExpertScoreTable {
    std::uint32_t n_layers = 0;
    std::uint32_t n_experts = 0;
    std::vector<std::string> domains;
    std::vector<ScoreCell> cells;  // ordered by (layer, expert, domain index)

    const ScoreCell& at(std::uint32_t layer, std::uint32_t expert, std::size_t domain_index) const;
};

/// Every (layer, expert, domain) cell. Domains without tokens and experts never
/// selected get H = A = S = 0 with zero support.
ExpertScoreTable score_table(const RoutingTrace& trace);

enum class TaxonomyKind { General, Domain, Unlabeled };

const char* to_string(TaxonomyKind kind) noexcept;

inline constexpr double kInfiniteRatio = std::numeric_limits<double>::infinity();

struct TaxonomyEntry {
    std::uint32_t layer = 0;
    std::uint32_t expert = 0;
    TaxonomyKind kind = TaxonomyKind::Unlabeled;
    std::string domain;  // set for TaxonomyKind::Domain
    /// S of the best domain over the largest S among the others;
    /// kInfiniteRatio when the others are all 0, and 0 when every S is 0.
    double preference_ratio = 0.0;

    std::string label() const;
};

inline constexpr double kDefaultRho = 2.0;
inline constexpr double kDefaultSigmaMax = 0.25;

/// Throws Classification with fewer than two domains and Configuration when
/// rho <= 1 or sigma_max < 0.
std::vector<TaxonomyEntry> classify_experts(const ExpertScoreTable& table, double rho = kDefaultRho,
                                            double sigma_max = kDefaultSigmaMax);

}  // namespace moelens
