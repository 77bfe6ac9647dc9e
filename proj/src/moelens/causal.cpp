// SPDX-License-Identifier: Apache-2.0

#include "moelens/causal.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "moelens/error.hpp"

namespace moelens {

namespace {

void check_distribution(std::span<const double> v, const char* name) {
    double sum = 0.0;
    for (double x : v) {
        require(std::isfinite(x) && x >= 0.0, ErrorCode::InvalidInput,
                std::string(name) + " has a negative or non-finite entry");
        sum += x;
    }
    require(std::fabs(sum - 1.0) <= 1e-6, ErrorCode::InvalidInput,
            std::string(name) + " sums to " + std::to_string(sum) + ", not 1");
}

std::vector<std::vector<std::vector<double>>> clean_runs(const MoEModel& model, const Corpus& corpus) {
    std::vector<std::vector<std::vector<double>>> out;
    out.reserve(corpus.sequences.size());
    for (const auto& s : corpus.sequences) out.push_back(forward(model, s.tokens).distributions);
    return out;
}

double effect_against(const MoEModel& model, const Corpus& corpus,
                      const std::vector<std::vector<std::vector<double>>>& clean, const Perturb& p,
                      std::uint64_t& n) {
    double total = 0.0;
    n = 0;
    for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
        const auto& seq = corpus.sequences[s];
        for (std::size_t pos = 0; pos < seq.tokens.size(); ++pos) {
            const auto q = forward_token(model, seq.tokens[pos], p);
            total += kl_divergence(clean[s][pos], q);
            ++n;
        }
    }
    return total / static_cast<double>(n);
}

void check_inputs(const MoEModel& model, const Corpus& corpus) {
    model.validate();
    require(!corpus.sequences.empty(), ErrorCode::InvalidInput, "causal effect needs a nonempty corpus");
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i)
        require(!corpus.sequences[i].tokens.empty(), ErrorCode::InvalidInput,
                "sequence " + std::to_string(i) + " is empty");
}

}  // namespace

double kl_divergence(std::span<const double> P, std::span<const double> Q) {
    require(P.size() == Q.size(), ErrorCode::InvalidInput,
            "KL inputs differ in length (" + std::to_string(P.size()) + " vs " + std::to_string(Q.size()) + ")");
    check_distribution(P, "P");
    check_distribution(Q, "Q");
    double kl = 0.0;
    for (std::size_t v = 0; v < P.size(); ++v) {
        if (P[v] < kProbFloor) continue;
        kl += P[v] * std::log2(P[v] / std::max(Q[v], kProbFloor));
    }
    return std::max(kl, 0.0);
}

double causal_effect(const MoEModel& model, const Corpus& corpus, std::uint32_t layer, std::uint32_t expert,
                     double magnitude, int sign) {
    check_inputs(model, corpus);
    const Perturb p{layer, expert, magnitude, sign};
    validate_modifier(p, model.spec);
    std::uint64_t n = 0;
    return effect_against(model, corpus, clean_runs(model, corpus), p, n);
}

const CausalCell& CausalEffectMatrix::at(std::uint32_t layer, std::uint32_t expert) const {
    require(layer < n_layers && expert < n_experts, ErrorCode::Configuration, "causal matrix cell out of range");
    return cells[static_cast<std::size_t>(layer) * n_experts + expert];
}

CausalEffectMatrix causal_effect_matrix(const MoEModel& model, const Corpus& corpus, double magnitude, int sign) {
    check_inputs(model, corpus);
    validate_modifier(Perturb{0, 0, magnitude, sign}, model.spec);
    const auto clean = clean_runs(model, corpus);
    CausalEffectMatrix m;
    m.n_layers = model.spec.n_layers;
    m.n_experts = model.spec.n_experts;
    m.magnitude = magnitude;
    m.sign = sign;
    for (std::uint32_t l = 0; l < m.n_layers; ++l)
        for (std::uint32_t e = 0; e < m.n_experts; ++e) {
            CausalCell c{l, e, 0.0, 0};
            c.ce = effect_against(model, corpus, clean, Perturb{l, e, magnitude, sign}, c.n_examples);
            m.cells.push_back(c);
        }
    return m;
}

std::vector<ExpertRef> DriverSet::refs() const {
    std::vector<ExpertRef> out;
    for (const auto& m : members) out.push_back({m.layer, m.expert});
    return out;
}

DriverSet identify_drivers(const CausalEffectMatrix& matrix, double q) {
    require(q > 0.0 && q < 1.0, ErrorCode::Configuration, "driver quantile must lie in (0,1)");
    require(matrix.cells.size() == static_cast<std::size_t>(matrix.n_layers) * matrix.n_experts,
            ErrorCode::InvalidInput, "causal matrix is incomplete");
    DriverSet out;
    out.quantile = q;
    for (std::uint32_t l = 0; l < matrix.n_layers; ++l) {
        std::vector<double> v;
        for (std::uint32_t e = 0; e < matrix.n_experts; ++e) v.push_back(matrix.at(l, e).ce);
        std::sort(v.begin(), v.end());
        const double h = static_cast<double>(v.size() - 1) * (1.0 - q);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, v.size() - 1);
        const double threshold = v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
        out.thresholds.push_back(threshold);
        if (v.front() == v.back()) {
            out.warnings.push_back("layer " + std::to_string(l) +
                                   ": all causal effects are equal; no drivers selected");
            continue;
        }
        for (std::uint32_t e = 0; e < matrix.n_experts; ++e)
            if (matrix.at(l, e).ce >= threshold) out.members.push_back(matrix.at(l, e));
    }
    return out;
}

std::vector<double> causal_rate(const RoutingTrace& trace, const std::vector<ExpertRef>& drivers) {
    std::vector<std::set<std::uint32_t>> by_layer(trace.n_layers);
    for (const auto& d : drivers) {
        require(d.layer < trace.n_layers && d.expert < trace.n_experts, ErrorCode::Configuration,
                "driver " + to_string(d) + " outside the trace's model");
        by_layer[d.layer].insert(d.expert);
    }
    std::vector<double> rate(trace.n_layers, 0.0);
    if (trace.records.empty()) return rate;
    std::vector<std::uint64_t> hits(trace.n_layers, 0);
    for (const auto& r : trace.records)
        for (std::size_t l = 0; l < r.layers.size() && l < trace.n_layers; ++l)
            for (const auto& c : r.layers[l].topk)
                if (by_layer[l].contains(c.expert)) {
                    ++hits[l];
                    break;
                }
    for (std::size_t l = 0; l < trace.n_layers; ++l)
        rate[l] = static_cast<double>(hits[l]) / static_cast<double>(trace.records.size());
    return rate;
}

}  // namespace moelens
