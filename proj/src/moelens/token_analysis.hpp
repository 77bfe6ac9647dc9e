// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "moelens/trace.hpp"

namespace moelens {

inline constexpr std::size_t kPositionBins = 5;
inline constexpr std::uint64_t kDefaultMinCount = 5;

/// Bin of a relative position: [0,0.2), ..., [0.8,1.0], values outside [0,1]
/// clamp to the end bins.
std::size_t position_bin(double rel_pos) noexcept;

struct PositionBinReport {
    std::string domain;
    std::array<std::uint64_t, kPositionBins> counts{};
    std::array<double, kPositionBins> fractions{};
    std::uint64_t total = 0;
    bool zero_support = true;
};

/// Tokens of `domain` that route to any listed expert, binned by rel_pos.
PositionBinReport position_bins(const RoutingTrace& trace, const std::vector<ExpertRef>& experts,
                                const std::string& domain);

struct AssociationRow {
    std::string token;
    double score = 0.0;          // log2(conditional_rate / base_rate)
    std::uint64_t count = 0;     // occurrences of the token
    std::uint64_t activated = 0; // occurrences routed to the set
    double conditional_rate = 0.0;
    double base_rate = 0.0;
};

struct TokenAssociationTable {
    std::string set_label;
    std::vector<AssociationRow> rows;  // descending score, then count, then token
    std::uint64_t total_tokens = 0;
    std::uint64_t activated_tokens = 0;
    bool zero_support = true;
};

/// PMI between token identity (token_text) and activation of the expert set.
/// Throws Configuration when min_count < 1 or an expert is outside the trace.
TokenAssociationTable token_expert_association(const RoutingTrace& trace, const std::vector<ExpertRef>& experts,
                                               std::uint64_t min_count = kDefaultMinCount,
                                               const std::string& set_label = "experts");

}  // namespace moelens
