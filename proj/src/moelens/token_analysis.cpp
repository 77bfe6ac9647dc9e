// SPDX-License-Identifier: Apache-2.0

#include "moelens/token_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "moelens/error.hpp"

namespace moelens {

namespace {

using LayerSets = std::vector<std::set<std::uint32_t>>;

LayerSets expert_sets(const RoutingTrace& trace, const std::vector<ExpertRef>& experts) {
    LayerSets sets(trace.n_layers);
    for (const auto& e : experts) {
        require(e.layer < trace.n_layers && e.expert < trace.n_experts, ErrorCode::Configuration,
                "expert " + to_string(e) + " outside the trace's model");
        sets[e.layer].insert(e.expert);
    }
    return sets;
}

bool qualifies(const TraceRecord& r, const LayerSets& sets) {
    for (std::size_t l = 0; l < sets.size() && l < r.layers.size(); ++l) {
        if (sets[l].empty()) continue;
        for (const auto& c : r.layers[l].topk)
            if (sets[l].contains(c.expert)) return true;
    }
    return false;
}

}  // namespace

std::size_t position_bin(double rel_pos) noexcept {
    if (!(rel_pos > 0.0)) return 0;
    const double b = std::floor(rel_pos * static_cast<double>(kPositionBins) + 1e-9);
    return b >= static_cast<double>(kPositionBins - 1) ? kPositionBins - 1 : static_cast<std::size_t>(b);
}

PositionBinReport position_bins(const RoutingTrace& trace, const std::vector<ExpertRef>& experts,
                                const std::string& domain) {
    require(std::find(trace.domains.begin(), trace.domains.end(), domain) != trace.domains.end(),
            ErrorCode::Configuration, "unknown domain '" + domain + "'");
    require(!experts.empty(), ErrorCode::InvalidInput, "position bins need a nonempty expert set");
    const auto sets = expert_sets(trace, experts);
    PositionBinReport rep;
    rep.domain = domain;
    for (const auto& r : trace.records) {
        if (r.dom != domain || !qualifies(r, sets)) continue;
        ++rep.counts[position_bin(r.rel_pos)];
        ++rep.total;
    }
    rep.zero_support = rep.total == 0;
    if (!rep.zero_support)
        for (std::size_t b = 0; b < kPositionBins; ++b)
            rep.fractions[b] = static_cast<double>(rep.counts[b]) / static_cast<double>(rep.total);
    return rep;
}

TokenAssociationTable token_expert_association(const RoutingTrace& trace, const std::vector<ExpertRef>& experts,
                                               std::uint64_t min_count, const std::string& set_label) {
    require(min_count >= 1, ErrorCode::Configuration, "min_count must be >= 1");
    const auto sets = expert_sets(trace, experts);
    TokenAssociationTable table;
    table.set_label = set_label;
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> tally;  // token -> (count, activated)
    for (const auto& r : trace.records) {
        auto& t = tally[r.text];
        ++t.first;
        ++table.total_tokens;
        if (qualifies(r, sets)) {
            ++t.second;
            ++table.activated_tokens;
        }
    }
    table.zero_support = table.activated_tokens == 0;
    if (table.zero_support) return table;

    const auto N = table.total_tokens, A = table.activated_tokens;
    const double base = static_cast<double>(A) / static_cast<double>(N);
    for (const auto& [token, t] : tally) {
        const auto [n_t, a_t] = t;
        if (n_t < min_count) continue;
        AssociationRow row{token, 0.0, n_t, a_t, static_cast<double>(a_t) / static_cast<double>(n_t), base};
        // Compare a_t/n_t with A/N via cross products so independence gives
        // exactly 0.
        const auto lhs = static_cast<unsigned __int128>(a_t) * N;
        const auto rhs = static_cast<unsigned __int128>(A) * n_t;
        if (a_t == 0)
            row.score = -std::numeric_limits<double>::infinity();
        else if (lhs != rhs)
            row.score = std::log2(static_cast<double>(lhs) / static_cast<double>(rhs));
        table.rows.push_back(std::move(row));
    }
    std::sort(table.rows.begin(), table.rows.end(), [](const AssociationRow& a, const AssociationRow& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.count != b.count) return a.count > b.count;
        return a.token < b.token;
    });
    return table;
}

}  // namespace moelens
