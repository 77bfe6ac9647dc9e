// SPDX-License-Identifier: Apache-2.0

#include "moelens/planted.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "moelens/error.hpp"
#include "moelens/rng.hpp"

namespace moelens {

namespace {

using nlohmann::json;

constexpr std::uint64_t kPlantStream = 0x9e3779b97f4a7c15ULL;

void check_ref(const ExpertRef& ref, const ModelSpec& base, const std::string& what) {
    require(ref.layer < base.n_layers && ref.expert < base.n_experts, ErrorCode::Configuration,
            what + " " + to_string(ref) + " outside model bounds (" + std::to_string(base.n_layers) + " layers, " +
                std::to_string(base.n_experts) + " experts)");
}

void round_to_float(Matrix& m) {
    for (auto& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

void PlantedSpec::validate() const {
    base.validate();
    require(std::isfinite(gate_bias_strength) && gate_bias_strength > 0.0, ErrorCode::Configuration,
            "gate_bias_strength must be > 0");

    std::set<std::string> names;
    std::set<TokenId> seen;
    std::set<TokenId> labels;
    for (const auto& d : domains) {
        require(!d.name.empty(), ErrorCode::Configuration, "domain names must be nonempty");
        require(names.insert(d.name).second, ErrorCode::Configuration, "duplicate domain '" + d.name + "'");
        require(!d.tokens.empty(), ErrorCode::Configuration, "domain '" + d.name + "' has no tokens");
        for (TokenId t : d.tokens) {
            require(t < base.vocab_size, ErrorCode::Configuration,
                    "domain '" + d.name + "' token " + std::to_string(t) + " outside vocabulary");
            require(seen.insert(t).second, ErrorCode::Configuration,
                    "token " + std::to_string(t) + " belongs to more than one domain");
        }
        if (d.label_token) {
            require(*d.label_token < base.vocab_size, ErrorCode::Configuration,
                    "label token of '" + d.name + "' outside vocabulary");
            require(labels.insert(*d.label_token).second, ErrorCode::Configuration,
                    "label token " + std::to_string(*d.label_token) + " used by two domains");
        }
    }
    for (TokenId l : labels)
        require(!seen.contains(l), ErrorCode::Configuration,
                "label token " + std::to_string(l) + " is also a domain token");

    std::map<ExpertRef, std::string> owner;
    for (const auto& [name, refs] : domain_experts) {
        require(names.contains(name), ErrorCode::Configuration, "domain experts listed for unknown domain '" + name + "'");
        for (const auto& r : refs) {
            check_ref(r, base, "domain expert");
            auto [it, inserted] = owner.emplace(r, name);
            require(inserted || it->second == name, ErrorCode::Configuration,
                    "conflicting plants: expert " + to_string(r) + " planted for '" + it->second + "' and '" + name +
                        "'");
        }
    }
    std::set<ExpertRef> drivers;
    for (const auto& r : driver_experts) {
        check_ref(r, base, "driver expert");
        require(drivers.insert(r).second, ErrorCode::Configuration, "driver " + to_string(r) + " listed twice");
    }

    const auto& t = tuning;
    for (double v : {t.driver_gain, t.driver_routing, t.general_routing, t.routing_noise, t.label_signal,
                     t.label_offset, t.label_noise, t.trigger_full_fraction, t.trigger_partial_fraction,
                     t.trigger_partial_lo, t.trigger_partial_hi, t.background_scale})
        require(std::isfinite(v) && v >= 0.0, ErrorCode::Configuration, "tuning values must be finite and >= 0");
    require(t.trigger_full_fraction + t.trigger_partial_fraction <= 1.0, ErrorCode::Configuration,
            "trigger fractions must sum to at most 1");
    require(t.trigger_partial_lo <= t.trigger_partial_hi, ErrorCode::Configuration,
            "trigger_partial_lo must not exceed trigger_partial_hi");
}

bool PlantedSpec::has_plants() const {
    if (!driver_experts.empty()) return true;
    return std::any_of(domain_experts.begin(), domain_experts.end(), [](const auto& kv) { return !kv.second.empty(); });
}

std::vector<ExpertRef> GroundTruth::all_domain_experts() const {
    std::vector<ExpertRef> out;
    for (const auto& [name, refs] : domain_experts) out.insert(out.end(), refs.begin(), refs.end());
    std::sort(out.begin(), out.end());
    return out;
}

PlantedLayout PlantedLayout::make(std::size_t d_model, std::size_t n_domains) {
    const std::size_t fixed = 3 + 2 * n_domains;
    require(d_model >= fixed + 2, ErrorCode::Configuration,
            "planted model needs d_model >= " + std::to_string(fixed + 2) + " for " + std::to_string(n_domains) +
                " domains");
    PlantedLayout lay;
    std::size_t next = 0;
    lay.constant = next++;
    for (std::size_t i = 0; i < n_domains; ++i) lay.domain.push_back(next++);
    lay.trigger = next++;
    for (std::size_t i = 0; i < n_domains; ++i) lay.label.push_back(next++);
    lay.lever = next++;
    const std::size_t rest = d_model - next;
    const std::size_t n_scratch = rest / 2;
    for (std::size_t i = 0; i < n_scratch; ++i) lay.scratch.push_back(next++);
    while (next < d_model) lay.content.push_back(next++);
    return lay;
}

std::pair<MoEModel, GroundTruth> build_planted_model(const PlantedSpec& spec) {
    spec.validate();
    MoEModel model = init_random(spec.base);
    GroundTruth truth;
    truth.domains = spec.domains;
    truth.domain_experts = spec.domain_experts;
    truth.driver_experts = spec.driver_experts;
    std::sort(truth.driver_experts.begin(), truth.driver_experts.end());
    for (auto& [name, refs] : truth.domain_experts) std::sort(refs.begin(), refs.end());
    truth.trigger_strength.assign(spec.base.vocab_size, 0.0);
    if (!spec.has_plants()) return {std::move(model), std::move(truth)};

    const auto& base = spec.base;
    const auto& tune = spec.tuning;
    const std::size_t nd = spec.domains.size();
    const auto lay = PlantedLayout::make(base.d_model, nd);
    require(base.d_ff >= nd + 1, ErrorCode::Configuration,
            "planted model needs d_ff >= " + std::to_string(nd + 1) + " for " + std::to_string(nd) + " domains");

    Rng rng(base.seed ^ kPlantStream);
    const double unit_out = 1.0 / silu(1.0);

    std::vector<int> domain_of(base.vocab_size, -1);
    std::vector<int> label_of(base.vocab_size, -1);
    for (std::size_t d = 0; d < nd; ++d) {
        for (TokenId t : spec.domains[d].tokens) domain_of[t] = static_cast<int>(d);
        if (spec.domains[d].label_token) label_of[*spec.domains[d].label_token] = static_cast<int>(d);
    }

    std::vector<bool> is_content(base.d_model, false);
    for (auto c : lay.content) is_content[c] = true;
    std::vector<bool> is_scratch(base.d_model, false);
    for (auto c : lay.scratch) is_scratch[c] = true;

    // Trigger roles are stratified per domain: exact counts, random placement.
    enum class Role { Plain, Partial, Full };
    std::vector<Role> role(base.vocab_size, Role::Plain);
    for (const auto& dom : spec.domains) {
        const auto n = dom.tokens.size();
        const auto n_full = static_cast<std::size_t>(std::llround(tune.trigger_full_fraction * static_cast<double>(n)));
        const auto n_part = std::min(
            n - n_full, static_cast<std::size_t>(std::llround(tune.trigger_partial_fraction * static_cast<double>(n))));
        std::vector<Role> roles(n, Role::Plain);
        std::fill_n(roles.begin(), n_full, Role::Full);
        std::fill_n(roles.begin() + static_cast<std::ptrdiff_t>(n_full), n_part, Role::Partial);
        for (std::size_t i = n; i > 1; --i) std::swap(roles[i - 1], roles[rng.below(i)]);
        for (std::size_t i = 0; i < n; ++i) role[dom.tokens[i]] = roles[i];
    }

    // Embeddings: constant feature, domain indicator, trigger strength and a
    // per-token label handicap; content features come from the random init.
    for (TokenId t = 0; t < base.vocab_size; ++t) {
        auto row = model.embed.row(t);
        for (std::size_t c = 0; c < row.size(); ++c)
            if (!is_content[c]) row[c] = 0.0;
        row[lay.constant] = 1.0;
        const int d = domain_of[t];
        if (d < 0) continue;
        row[lay.domain[static_cast<std::size_t>(d)]] = 1.0;
        double tau = 0.0;
        if (role[t] == Role::Full)
            tau = 1.0;
        else if (role[t] == Role::Partial)
            tau = rng.uniform(tune.trigger_partial_lo, tune.trigger_partial_hi);
        truth.trigger_strength[t] = static_cast<double>(static_cast<float>(tau));
        row[lay.trigger] = tau;
        for (std::size_t j = 0; j < nd; ++j)
            row[lay.label[j]] = tune.label_noise * rng.normal() - (static_cast<int>(j) == d ? tune.label_offset : 0.0);
    }

    // Unembedding: label tokens read only their label direction; every other
    // token reads the lever with a random coefficient.
    for (TokenId t = 0; t < base.vocab_size; ++t) {
        auto row = model.unembed.row(t);
        if (label_of[t] >= 0) {
            std::fill(row.begin(), row.end(), 0.0);
            row[lay.label[static_cast<std::size_t>(label_of[t])]] = 1.0;
            continue;
        }
        for (std::size_t d = 0; d < nd; ++d) {
            row[lay.domain[d]] = 0.0;
            row[lay.label[d]] = 0.0;
        }
        row[lay.trigger] = 0.0;
        row[lay.lever] = rng.normal();
    }

    const double noise_gain =
        tune.routing_noise * std::sqrt(static_cast<double>(base.d_model) / static_cast<double>(lay.content.size()));

    for (std::uint32_t l = 0; l < base.n_layers; ++l) {
        auto& layer = model.layers[l];
        std::map<std::uint32_t, std::size_t> domain_expert;  // expert -> domain
        for (std::size_t d = 0; d < nd; ++d) {
            auto it = spec.domain_experts.find(spec.domains[d].name);
            if (it == spec.domain_experts.end()) continue;
            for (const auto& r : it->second)
                if (r.layer == l) domain_expert[r.expert] = d;
        }
        std::set<std::uint32_t> drivers;
        for (const auto& r : spec.driver_experts)
            if (r.layer == l) drivers.insert(r.expert);

        std::optional<std::uint32_t> general;
        for (std::uint32_t e = 0; e < base.n_experts; ++e) {
            if (!domain_expert.contains(e) && !drivers.contains(e)) {
                general = e;
                break;
            }
        }
        if (general) truth.general_experts.push_back({l, *general});

        for (std::uint32_t e = 0; e < base.n_experts; ++e) {
            auto gate = layer.gate.row(e);
            for (std::size_t c = 0; c < gate.size(); ++c) gate[c] = is_content[c] ? gate[c] * noise_gain : 0.0;
            if (auto it = domain_expert.find(e); it != domain_expert.end()) {
                for (std::size_t d = 0; d < nd; ++d)
                    gate[lay.domain[d]] += d == it->second ? spec.gate_bias_strength : -spec.gate_bias_strength;
            }
            if (drivers.contains(e)) gate[lay.trigger] += tune.driver_routing;
            if (general && e == *general) gate[lay.constant] += tune.general_routing;

            auto& ffn = layer.experts[e];
            if (drivers.contains(e)) {
                ffn.w1.fill(0.0);
                ffn.w2.fill(0.0);
                for (std::size_t d = 0; d < nd; ++d) {
                    ffn.w1(d, lay.domain[d]) = 1.0;
                    ffn.w2(lay.label[d], d) = tune.label_signal * unit_out;
                }
                ffn.w1(nd, lay.constant) = 1.0;
                ffn.w2(lay.lever, nd) = tune.driver_gain * unit_out;
            } else if (auto it = domain_expert.find(e); it != domain_expert.end()) {
                ffn.w1.fill(0.0);
                ffn.w2.fill(0.0);
                ffn.w1(0, lay.domain[it->second]) = 1.0;
                ffn.w2(lay.label[it->second], 0) = tune.label_signal * unit_out;
            } else {
                for (std::size_t r = 0; r < ffn.w1.rows(); ++r)
                    for (std::size_t c = 0; c < ffn.w1.cols(); ++c)
                        if (!is_content[c] && c != lay.constant) ffn.w1(r, c) = 0.0;
                for (std::size_t r = 0; r < ffn.w2.rows(); ++r)
                    for (std::size_t c = 0; c < ffn.w2.cols(); ++c)
                        ffn.w2(r, c) = is_scratch[r] ? ffn.w2(r, c) * tune.background_scale : 0.0;
            }
        }
    }

    round_to_float(model.embed);
    round_to_float(model.unembed);
    for (auto& layer : model.layers) {
        round_to_float(layer.gate);
        for (auto& e : layer.experts) {
            round_to_float(e.w1);
            round_to_float(e.w2);
        }
    }
    std::sort(truth.general_experts.begin(), truth.general_experts.end());
    model.validate();
    return {std::move(model), std::move(truth)};
}

PlantedSpec default_planted_spec() {
    PlantedSpec s;
    s.base = ModelSpec{4, 8, 2, 32, 8, 256, 7};
    PlantedDomain alpha{"alpha", {}, 250};
    PlantedDomain beta{"beta", {}, 251};
    for (TokenId t = 0; t < 96; ++t) alpha.tokens.push_back(t);
    for (TokenId t = 96; t < 192; ++t) beta.tokens.push_back(t);
    s.domains = {alpha, beta};
    s.domain_experts["alpha"] = {{0, 1}, {1, 2}, {2, 7}, {3, 0}};
    s.domain_experts["beta"] = {{0, 4}, {1, 5}, {2, 3}, {3, 6}};
    s.driver_experts = {{0, 6}, {1, 0}, {2, 5}, {3, 2}};
    s.gate_bias_strength = 6.0;
    return s;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json refs_to_json(const std::vector<ExpertRef>& refs) {
    json arr = json::array();
    for (const auto& r : refs) arr.push_back({r.layer, r.expert});
    return arr;
}

std::vector<ExpertRef> refs_from_json(const json& j) {
    std::vector<ExpertRef> out;
    for (const auto& r : j) {
        require(r.is_array() && r.size() == 2, ErrorCode::Malformed, "expert reference must be [layer, expert]");
        out.push_back({r[0].get<std::uint32_t>(), r[1].get<std::uint32_t>()});
    }
    return out;
}

json domains_to_json(const std::vector<PlantedDomain>& domains) {
    json arr = json::array();
    for (const auto& d : domains) {
        json o{{"name", d.name}, {"tokens", d.tokens}};
        if (d.label_token) o["label_token"] = *d.label_token;
        arr.push_back(std::move(o));
    }
    return arr;
}

std::vector<PlantedDomain> domains_from_json(const json& j) {
    std::vector<PlantedDomain> out;
    for (const auto& o : j) {
        PlantedDomain d;
        d.name = o.at("name").get<std::string>();
        if (o.contains("tokens")) d.tokens = o.at("tokens").get<std::vector<TokenId>>();
        if (o.contains("range")) {
            const auto r = o.at("range").get<std::vector<TokenId>>();
            require(r.size() == 2 && r[0] <= r[1], ErrorCode::Malformed, "domain range must be [first, end)");
            for (TokenId t = r[0]; t < r[1]; ++t) d.tokens.push_back(t);
        }
        if (o.contains("label_token")) d.label_token = o.at("label_token").get<TokenId>();
        out.push_back(std::move(d));
    }
    return out;
}

template <typename F>
auto parse_json(const std::string& text, const char* what, F&& body) {
    try {
        return body(json::parse(text));
    } catch (const json::exception& e) {
        fail(ErrorCode::Malformed, std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::string planted_spec_to_json(const PlantedSpec& spec) {
    const auto& b = spec.base;
    const auto& t = spec.tuning;
    json experts = json::object();
    for (const auto& [name, refs] : spec.domain_experts) experts[name] = refs_to_json(refs);
    json j{
        {"base",
         {{"n_layers", b.n_layers},
          {"n_experts", b.n_experts},
          {"top_k", b.top_k},
          {"d_model", b.d_model},
          {"d_ff", b.d_ff},
          {"vocab_size", b.vocab_size},
          {"seed", b.seed}}},
        {"domains", domains_to_json(spec.domains)},
        {"domain_experts", experts},
        {"driver_experts", refs_to_json(spec.driver_experts)},
        {"gate_bias_strength", spec.gate_bias_strength},
        {"tuning",
         {{"driver_gain", t.driver_gain},
          {"driver_routing", t.driver_routing},
          {"general_routing", t.general_routing},
          {"routing_noise", t.routing_noise},
          {"label_signal", t.label_signal},
          {"label_offset", t.label_offset},
          {"label_noise", t.label_noise},
          {"trigger_full_fraction", t.trigger_full_fraction},
          {"trigger_partial_fraction", t.trigger_partial_fraction},
          {"trigger_partial_lo", t.trigger_partial_lo},
          {"trigger_partial_hi", t.trigger_partial_hi},
          {"background_scale", t.background_scale}}},
    };
    return j.dump(2) + "\n";
}

PlantedSpec planted_spec_from_json(const std::string& text) {
    return parse_json(text, "planted spec", [](const json& j) {
        PlantedSpec s;
        const auto& b = j.at("base");
        s.base.n_layers = b.at("n_layers").get<std::uint32_t>();
        s.base.n_experts = b.at("n_experts").get<std::uint32_t>();
        s.base.top_k = b.at("top_k").get<std::uint32_t>();
        s.base.d_model = b.at("d_model").get<std::uint32_t>();
        s.base.d_ff = b.at("d_ff").get<std::uint32_t>();
        s.base.vocab_size = b.at("vocab_size").get<std::uint32_t>();
        s.base.seed = b.value("seed", std::uint64_t{0});
        if (j.contains("domains")) s.domains = domains_from_json(j.at("domains"));
        if (j.contains("domain_experts"))
            for (const auto& [name, refs] : j.at("domain_experts").items()) s.domain_experts[name] = refs_from_json(refs);
        if (j.contains("driver_experts")) s.driver_experts = refs_from_json(j.at("driver_experts"));
        s.gate_bias_strength = j.value("gate_bias_strength", 6.0);
        if (j.contains("tuning")) {
            const auto& t = j.at("tuning");
            auto& d = s.tuning;
            d.driver_gain = t.value("driver_gain", d.driver_gain);
            d.driver_routing = t.value("driver_routing", d.driver_routing);
            d.general_routing = t.value("general_routing", d.general_routing);
            d.routing_noise = t.value("routing_noise", d.routing_noise);
            d.label_signal = t.value("label_signal", d.label_signal);
            d.label_offset = t.value("label_offset", d.label_offset);
            d.label_noise = t.value("label_noise", d.label_noise);
            d.trigger_full_fraction = t.value("trigger_full_fraction", d.trigger_full_fraction);
            d.trigger_partial_fraction = t.value("trigger_partial_fraction", d.trigger_partial_fraction);
            d.trigger_partial_lo = t.value("trigger_partial_lo", d.trigger_partial_lo);
            d.trigger_partial_hi = t.value("trigger_partial_hi", d.trigger_partial_hi);
            d.background_scale = t.value("background_scale", d.background_scale);
        }
        return s;
    });
}

std::string ground_truth_to_json(const GroundTruth& truth) {
    json experts = json::object();
    for (const auto& [name, refs] : truth.domain_experts) experts[name] = refs_to_json(refs);
    json j{
        {"domains", domains_to_json(truth.domains)},
        {"domain_experts", experts},
        {"driver_experts", refs_to_json(truth.driver_experts)},
        {"general_experts", refs_to_json(truth.general_experts)},
        {"trigger_strength", truth.trigger_strength},
    };
    return j.dump(2) + "\n";
}

GroundTruth ground_truth_from_json(const std::string& text) {
    return parse_json(text, "ground truth", [](const json& j) {
        GroundTruth g;
        g.domains = domains_from_json(j.at("domains"));
        for (const auto& [name, refs] : j.at("domain_experts").items()) g.domain_experts[name] = refs_from_json(refs);
        g.driver_experts = refs_from_json(j.at("driver_experts"));
        g.general_experts = refs_from_json(j.value("general_experts", json::array()));
        g.trigger_strength = j.value("trigger_strength", std::vector<double>{});
        return g;
    });
}

}  // namespace moelens
