// SPDX-License-Identifier: Apache-2.0

#include "moelens/domain_metrics.hpp"

#include <algorithm>
#include <cmath>

#include "moelens/error.hpp"

namespace moelens {

namespace {

std::size_t domain_index(const RoutingTrace& trace, const std::string& domain) {
    const auto it = std::find(trace.domains.begin(), trace.domains.end(), domain);
    require(it != trace.domains.end(), ErrorCode::Configuration, "unknown domain '" + domain + "'");
    return static_cast<std::size_t>(it - trace.domains.begin());
}

void check_cell(const RoutingTrace& trace, std::uint32_t layer, std::uint32_t expert) {
    require(layer < trace.n_layers, ErrorCode::Configuration,
            "layer " + std::to_string(layer) + " out of range (" + std::to_string(trace.n_layers) + " layers)");
    require(expert < trace.n_experts, ErrorCode::Configuration,
            "expert " + std::to_string(expert) + " out of range (" + std::to_string(trace.n_experts) + " experts)");
}

const TraceChoice* find_choice(const TraceRecord& r, std::uint32_t layer, std::uint32_t expert) {
    if (layer >= r.layers.size()) return nullptr;
    for (const auto& c : r.layers[layer].topk)
        if (c.expert == expert) return &c;
    return nullptr;
}

}  // namespace

double binary_entropy(double p) noexcept {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double expert_entropy(const RoutingTrace& trace, std::uint32_t layer, std::uint32_t expert,
                      const std::string& domain) {
    domain_index(trace, domain);
    check_cell(trace, layer, expert);
    double total = 0.0;
    std::uint64_t n = 0;
    for (const auto& r : trace.records) {
        if (r.dom != domain) continue;
        if (const auto* c = find_choice(r, layer, expert)) {
            total += binary_entropy(c->prob);
            ++n;
        }
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

double activation_rate(const RoutingTrace& trace, std::uint32_t layer, std::uint32_t expert,
                       const std::string& domain) {
    domain_index(trace, domain);
    check_cell(trace, layer, expert);
    std::uint64_t tokens = 0, hits = 0;
    for (const auto& r : trace.records) {
        if (r.dom != domain) continue;
        ++tokens;
        if (find_choice(r, layer, expert)) ++hits;
    }
    require(tokens > 0, ErrorCode::EmptyDomain, "domain '" + domain + "' has no tokens in the trace");
    return static_cast<double>(hits) / static_cast<double>(tokens);
}

double cwas(double H, double A) {
    require(H >= 0.0 && H <= 1.0, ErrorCode::InvalidInput, "entropy must lie in [0,1]");
    require(A >= 0.0 && A <= 1.0, ErrorCode::InvalidInput, "activation rate must lie in [0,1]");
    return (1.0 - H) * A;
}

const ScoreCell& ExpertScoreTable::at(std::uint32_t layer, std::uint32_t expert, std::size_t d) const {
    require(layer < n_layers && expert < n_experts && d < domains.size(), ErrorCode::Configuration,
            "score table cell out of range");
    return cells[(static_cast<std::size_t>(layer) * n_experts + expert) * domains.size() + d];
}

ExpertScoreTable score_table(const RoutingTrace& trace) {
    ExpertScoreTable t;
    t.n_layers = trace.n_layers;
    t.n_experts = trace.n_experts;
    t.domains = trace.domains;
    const auto nd = t.domains.size();
    const auto n_cells = static_cast<std::size_t>(t.n_layers) * t.n_experts * nd;
    std::vector<std::uint64_t> support(n_cells, 0);
    std::vector<double> entropy(n_cells, 0.0);
    std::vector<std::uint64_t> tokens(nd, 0);

    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const auto& r = trace.records[i];
        const auto it = std::find(t.domains.begin(), t.domains.end(), r.dom);
        require(it != t.domains.end(), ErrorCode::Configuration,
                "record " + std::to_string(i) + ": domain '" + r.dom + "' not in trace header");
        const auto d = static_cast<std::size_t>(it - t.domains.begin());
        ++tokens[d];
        for (std::size_t l = 0; l < r.layers.size() && l < t.n_layers; ++l)
            for (const auto& c : r.layers[l].topk) {
                require(c.expert < t.n_experts, ErrorCode::Configuration,
                        "record " + std::to_string(i) + " layer " + std::to_string(l) + ": expert id out of range");
                const auto idx = (l * t.n_experts + c.expert) * nd + d;
                ++support[idx];
                entropy[idx] += binary_entropy(c.prob);
            }
    }

    t.cells.reserve(n_cells);
    for (std::uint32_t l = 0; l < t.n_layers; ++l)
        for (std::uint32_t e = 0; e < t.n_experts; ++e)
            for (std::size_t d = 0; d < nd; ++d) {
                const auto idx = (static_cast<std::size_t>(l) * t.n_experts + e) * nd + d;
                ScoreCell c{l, e, t.domains[d], 0.0, 0.0, 0.0, support[idx]};
                if (support[idx] > 0) {
                    c.H = std::clamp(entropy[idx] / static_cast<double>(support[idx]), 0.0, 1.0);
                    c.A = static_cast<double>(support[idx]) / static_cast<double>(tokens[d]);
                }
                c.S = cwas(c.H, c.A);
                t.cells.push_back(std::move(c));
            }
    return t;
}

const char* to_string(TaxonomyKind kind) noexcept {
    switch (kind) {
        case TaxonomyKind::General: return "general";
        case TaxonomyKind::Domain: return "domain";
        case TaxonomyKind::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string TaxonomyEntry::label() const {
    return kind == TaxonomyKind::Domain ? "domain(" + domain + ")" : to_string(kind);
}

std::vector<TaxonomyEntry> classify_experts(const ExpertScoreTable& table, double rho, double sigma_max) {
    require(std::isfinite(rho) && rho > 1.0, ErrorCode::Configuration, "rho must be > 1");
    require(std::isfinite(sigma_max) && sigma_max >= 0.0, ErrorCode::Configuration, "sigma_max must be >= 0");
    const auto nd = table.domains.size();
    require(nd >= 2, ErrorCode::Classification,
            "classification needs at least 2 domains, trace has " + std::to_string(nd));

    std::vector<TaxonomyEntry> out;
    std::vector<double> S(nd), A(nd);
    for (std::uint32_t l = 0; l < table.n_layers; ++l)
        for (std::uint32_t e = 0; e < table.n_experts; ++e) {
            for (std::size_t d = 0; d < nd; ++d) {
                S[d] = table.at(l, e, d).S;
                A[d] = table.at(l, e, d).A;
            }
            const auto best = static_cast<std::size_t>(std::max_element(S.begin(), S.end()) - S.begin());
            double other = 0.0;
            for (std::size_t d = 0; d < nd; ++d)
                if (d != best) other = std::max(other, S[d]);

            TaxonomyEntry entry{l, e, TaxonomyKind::Unlabeled, {}, 0.0};
            if (S[best] > 0.0) entry.preference_ratio = other > 0.0 ? S[best] / other : kInfiniteRatio;

            double mean_s = 0.0, mean_a = 0.0;
            for (std::size_t d = 0; d < nd; ++d) {
                mean_s += S[d];
                mean_a += A[d];
            }
            mean_s /= static_cast<double>(nd);
            mean_a /= static_cast<double>(nd);
            double var = 0.0;
            for (double s : S) var += (s - mean_s) * (s - mean_s);
            var /= static_cast<double>(nd);
            const bool all_equal = std::all_of(S.begin(), S.end(), [&](double s) { return s == S[0]; });
            const double cv = all_equal ? 0.0 : std::sqrt(var) / mean_s;

            if (S[best] > 0.0 && S[best] >= rho * other) {
                entry.kind = TaxonomyKind::Domain;
                entry.domain = table.domains[best];
            } else if (cv <= sigma_max && mean_a > 0.0) {
                entry.kind = TaxonomyKind::General;
            }
            out.push_back(std::move(entry));
        }
    return out;
}

}  // namespace moelens
