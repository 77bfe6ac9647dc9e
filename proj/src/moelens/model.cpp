// SPDX-License-Identifier: Apache-2.0

#include "moelens/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "moelens/error.hpp"
#include "moelens/rng.hpp"

namespace moelens {

void ModelSpec::validate() const {
    auto positive = [](std::uint32_t v, const char* name) {
        require(v >= 1, ErrorCode::Configuration, std::string(name) + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(n_experts, "n_experts");
    positive(top_k, "top_k");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(vocab_size, "vocab_size");
    require(top_k <= n_experts, ErrorCode::Configuration,
            "top_k (" + std::to_string(top_k) + ") exceeds n_experts (" + std::to_string(n_experts) + ")");
}

std::string to_string(const ExpertRef& ref) {
    return "(" + std::to_string(ref.layer) + "," + std::to_string(ref.expert) + ")";
}

double silu(double x) noexcept { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) noexcept {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

MoEModel MoEModel::zeros(const ModelSpec& spec) {
    spec.validate();
    MoEModel m;
    m.spec = spec;
    m.embed = Matrix(spec.vocab_size, spec.d_model);
    m.unembed = Matrix(spec.vocab_size, spec.d_model);
    m.layers.resize(spec.n_layers);
    for (auto& layer : m.layers) {
        layer.gate = Matrix(spec.n_experts, spec.d_model);
        layer.experts.resize(spec.n_experts);
        for (auto& e : layer.experts) {
            e.w1 = Matrix(spec.d_ff, spec.d_model);
            e.w2 = Matrix(spec.d_model, spec.d_ff);
        }
    }
    return m;
}

void MoEModel::validate() const {
    spec.validate();
    auto shape = [](const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
        require(m.rows() == r && m.cols() == c, ErrorCode::Configuration,
                name + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                    std::to_string(r) + "x" + std::to_string(c));
        for (double v : m.data())
            require(std::isfinite(v), ErrorCode::InvalidInput, name + " contains a non-finite weight");
    };
    shape(embed, spec.vocab_size, spec.d_model, "embed");
    shape(unembed, spec.vocab_size, spec.d_model, "unembed");
    require(layers.size() == spec.n_layers, ErrorCode::Configuration, "layer count does not match spec");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto prefix = "layer " + std::to_string(l);
        shape(layers[l].gate, spec.n_experts, spec.d_model, prefix + " gate");
        require(layers[l].experts.size() == spec.n_experts, ErrorCode::Configuration,
                prefix + " expert count does not match spec");
        for (std::size_t e = 0; e < spec.n_experts; ++e) {
            const auto ep = prefix + " expert " + std::to_string(e);
            shape(layers[l].experts[e].w1, spec.d_ff, spec.d_model, ep + " w1");
            shape(layers[l].experts[e].w2, spec.d_model, spec.d_ff, ep + " w2");
        }
    }
}

std::string MoEModel::descriptor() const {
    std::ostringstream os;
    os << "moelens-toy act=" << kNonlinearity << " L=" << spec.n_layers << " E=" << spec.n_experts
       << " k=" << spec.top_k << " d=" << spec.d_model << " ff=" << spec.d_ff << " V=" << spec.vocab_size
       << " seed=" << spec.seed;
    return os.str();
}

MoEModel init_random(const ModelSpec& spec) {
    MoEModel m = MoEModel::zeros(spec);
    Rng rng(spec.seed);
    auto draw = [&rng](Matrix& mat, double scale) {
        for (auto& v : mat.data()) v = static_cast<double>(static_cast<float>(scale * rng.normal()));
    };
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_model));
    const double ff_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_ff));
    draw(m.embed, 1.0);
    for (auto& layer : m.layers) {
        draw(layer.gate, in_scale);
        for (auto& e : layer.experts) {
            draw(e.w1, in_scale);
            draw(e.w2, ff_scale);
        }
    }
    draw(m.unembed, in_scale);
    return m;
}

void validate_modifier(const GateModifier& modifier, const ModelSpec& spec) {
    auto bounds = [&spec](std::uint32_t layer, std::uint32_t expert) {
        require(layer < spec.n_layers, ErrorCode::Configuration,
                "modifier layer " + std::to_string(layer) + " out of range (" + std::to_string(spec.n_layers) +
                    " layers)");
        require(expert < spec.n_experts, ErrorCode::Configuration,
                "modifier expert " + std::to_string(expert) + " out of range (" + std::to_string(spec.n_experts) +
                    " experts)");
    };
    if (const auto* p = std::get_if<Perturb>(&modifier)) {
        bounds(p->layer, p->expert);
        require(std::isfinite(p->magnitude) && p->magnitude >= 0.0, ErrorCode::InvalidInput,
                "perturbation magnitude must be finite and >= 0");
        require(p->sign == 1 || p->sign == -1, ErrorCode::InvalidInput, "perturbation sign must be +1 or -1");
    } else if (const auto* s = std::get_if<Scale>(&modifier)) {
        for (const auto& e : s->edits) {
            bounds(e.layer, e.expert);
            require(std::isfinite(e.factor) && e.factor > 0.0, ErrorCode::InvalidInput,
                    "scale factor must be finite and > 0");
        }
    }
}

void apply_modifier(const GateModifier& modifier, std::uint32_t layer, std::span<double> logits) {
    if (const auto* p = std::get_if<Perturb>(&modifier)) {
        if (p->layer == layer) logits[p->expert] += static_cast<double>(p->sign) * p->magnitude;
    } else if (const auto* s = std::get_if<Scale>(&modifier)) {
        for (const auto& e : s->edits)
            if (e.layer == layer) logits[e.expert] *= e.factor;
    }
}

TopK topk_gate(std::span<const double> logits, std::size_t k) {
    require(k >= 1 && k <= logits.size(), ErrorCode::Configuration,
            "top-k of " + std::to_string(k) + " over " + std::to_string(logits.size()) + " logits");
    for (double z : logits) require(std::isfinite(z), ErrorCode::InvalidInput, "non-finite gate logit");

    std::vector<std::uint32_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                      });
    TopK out;
    out.ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    out.probs.resize(k);
    const double zmax = logits[out.ids.front()];
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out.probs[i] = std::exp(logits[out.ids[i]] - zmax);
        total += out.probs[i];
    }
    for (auto& p : out.probs) p /= total;
    return out;
}

std::vector<double> forward_token(const MoEModel& model, TokenId token, const GateModifier& modifier,
                                  std::vector<LayerRouting>* routing) {
    const auto& spec = model.spec;
    require(token < spec.vocab_size, ErrorCode::InvalidInput,
            "token id " + std::to_string(token) + " outside vocabulary of " + std::to_string(spec.vocab_size));

    std::vector<double> h(model.embed.row(token).begin(), model.embed.row(token).end());
    std::vector<double> update(spec.d_model);
    std::vector<double> hidden(spec.d_ff);
    std::vector<double> logits(spec.n_experts);
    if (routing) routing->resize(spec.n_layers);

    for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
        const auto& layer = model.layers[l];
        matvec(layer.gate, h, logits);
        apply_modifier(modifier, l, logits);
        TopK sel = topk_gate(logits, spec.top_k);

        std::fill(update.begin(), update.end(), 0.0);
        for (std::size_t i = 0; i < sel.ids.size(); ++i) {
            const auto& ffn = layer.experts[sel.ids[i]];
            matvec(ffn.w1, h, hidden);
            for (auto& a : hidden) a = silu(a);
            const double w = sel.probs[i];
            for (std::size_t r = 0; r < spec.d_model; ++r) {
                const auto row = ffn.w2.row(r);
                double acc = 0.0;
                for (std::size_t c = 0; c < spec.d_ff; ++c) acc += row[c] * hidden[c];
                update[r] += w * acc;
            }
        }
        for (std::size_t r = 0; r < spec.d_model; ++r) h[r] += update[r];

        if (routing) {
            (*routing)[l].logits = logits;
            (*routing)[l].topk = std::move(sel);
        }
    }

    std::vector<double> out(spec.vocab_size);
    matvec(model.unembed, h, out);
    const double zmax = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (auto& v : out) {
        v = std::exp(v - zmax);
        total += v;
    }
    for (auto& v : out) v /= total;
    return out;
}

ForwardResult forward(const MoEModel& model, std::span<const TokenId> tokens, const GateModifier& modifier) {
    require(!tokens.empty(), ErrorCode::InvalidInput, "forward called on an empty sequence");
    validate_modifier(modifier, model.spec);
    ForwardResult result;
    result.distributions.reserve(tokens.size());
    result.routing.resize(tokens.size());
    for (std::size_t pos = 0; pos < tokens.size(); ++pos)
        result.distributions.push_back(forward_token(model, tokens[pos], modifier, &result.routing[pos]));
    return result;
}

}  // namespace moelens
