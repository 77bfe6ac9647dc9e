// SPDX-License-Identifier: Apache-2.0

#include "moelens/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "moelens/error.hpp"
#include "moelens/rng.hpp"

namespace moelens {

namespace {

struct LayerCache {
    std::vector<double> h_in;
    TopK sel;
    std::vector<std::vector<double>> pre;  // per selected expert: W1 h
    std::vector<std::vector<double>> act;  // silu(pre)
    std::vector<std::vector<double>> out;  // W2 act
};

struct TokenCache {
    std::vector<LayerCache> layers;
    std::vector<double> h_final;
    std::vector<double> probs;
};

void run_cached(const MoEModel& model, TokenId token, TokenCache& cache) {
    const auto& spec = model.spec;
    std::vector<double> h(model.embed.row(token).begin(), model.embed.row(token).end());
    std::vector<double> logits(spec.n_experts);
    cache.layers.resize(spec.n_layers);
    for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
        const auto& layer = model.layers[l];
        auto& lc = cache.layers[l];
        lc.h_in = h;
        matvec(layer.gate, h, logits);
        lc.sel = topk_gate(logits, spec.top_k);
        const auto k = lc.sel.ids.size();
        lc.pre.assign(k, std::vector<double>(spec.d_ff));
        lc.act.assign(k, std::vector<double>(spec.d_ff));
        lc.out.assign(k, std::vector<double>(spec.d_model));
        for (std::size_t i = 0; i < k; ++i) {
            const auto& ffn = layer.experts[lc.sel.ids[i]];
            matvec(ffn.w1, lc.h_in, lc.pre[i]);
            for (std::size_t j = 0; j < spec.d_ff; ++j) lc.act[i][j] = silu(lc.pre[i][j]);
            matvec(ffn.w2, lc.act[i], lc.out[i]);
            for (std::size_t r = 0; r < spec.d_model; ++r) h[r] += lc.sel.probs[i] * lc.out[i][r];
        }
    }
    cache.h_final = h;
    cache.probs.resize(spec.vocab_size);
    matvec(model.unembed, h, cache.probs);
    const double zmax = *std::max_element(cache.probs.begin(), cache.probs.end());
    double total = 0.0;
    for (auto& v : cache.probs) {
        v = std::exp(v - zmax);
        total += v;
    }
    for (auto& v : cache.probs) v /= total;
}

void zero(Gradients& g) {
    g.embed.fill(0.0);
    g.unembed.fill(0.0);
    for (auto& layer : g.layers) {
        layer.gate.fill(0.0);
        for (auto& e : layer.experts) {
            e.w1.fill(0.0);
            e.w2.fill(0.0);
        }
    }
}

template <typename F>
void zip_weights(MoEModel& a, const MoEModel& b, F&& f) {
    auto each = [&](Matrix& x, const Matrix& y) {
        auto xs = x.data();
        auto ys = y.data();
        for (std::size_t i = 0; i < xs.size(); ++i) f(xs[i], ys[i]);
    };
    each(a.embed, b.embed);
    each(a.unembed, b.unembed);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        each(a.layers[l].gate, b.layers[l].gate);
        for (std::size_t e = 0; e < a.layers[l].experts.size(); ++e) {
            each(a.layers[l].experts[e].w1, b.layers[l].experts[e].w1);
            each(a.layers[l].experts[e].w2, b.layers[l].experts[e].w2);
        }
    }
}

}  // namespace

double batch_loss(const MoEModel& model, std::span<const TokenPair> pairs) {
    require(!pairs.empty(), ErrorCode::InvalidInput, "loss over an empty batch");
    double total = 0.0;
    for (const auto& p : pairs) {
        require(p.target < model.spec.vocab_size, ErrorCode::InvalidInput, "target outside vocabulary");
        const auto dist = forward_token(model, p.input, NoModifier{});
        total -= std::log(dist[p.target]);
    }
    return total / static_cast<double>(pairs.size());
}

double loss_and_gradients(const MoEModel& model, std::span<const TokenPair> pairs, Gradients& grads) {
    require(!pairs.empty(), ErrorCode::InvalidInput, "loss over an empty batch");
    const auto& spec = model.spec;
    if (!(grads.spec == spec)) grads = MoEModel::zeros(spec);
    zero(grads);

    const double scale = 1.0 / static_cast<double>(pairs.size());
    double total = 0.0;
    TokenCache cache;
    std::vector<double> g(spec.d_model), dlogit(spec.vocab_size), du(spec.d_ff), da(spec.d_ff);

    for (const auto& p : pairs) {
        require(p.input < spec.vocab_size && p.target < spec.vocab_size, ErrorCode::InvalidInput,
                "token outside vocabulary");
        run_cached(model, p.input, cache);
        total -= std::log(cache.probs[p.target]);

        for (std::size_t v = 0; v < spec.vocab_size; ++v)
            dlogit[v] = scale * (cache.probs[v] - (v == p.target ? 1.0 : 0.0));
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t v = 0; v < spec.vocab_size; ++v) {
            const auto row = model.unembed.row(v);
            auto grow = grads.unembed.row(v);
            for (std::size_t c = 0; c < spec.d_model; ++c) {
                grow[c] += dlogit[v] * cache.h_final[c];
                g[c] += dlogit[v] * row[c];
            }
        }

        for (std::uint32_t l = spec.n_layers; l-- > 0;) {
            const auto& layer = model.layers[l];
            auto& glayer = grads.layers[l];
            const auto& lc = cache.layers[l];
            const auto k = lc.sel.ids.size();
            std::vector<double> dh = g;  // residual path

            std::vector<double> dp(k, 0.0);
            double mean_dp = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t r = 0; r < spec.d_model; ++r) dp[i] += g[r] * lc.out[i][r];
                mean_dp += lc.sel.probs[i] * dp[i];
            }
            for (std::size_t i = 0; i < k; ++i) {
                const auto e = lc.sel.ids[i];
                const double w = lc.sel.probs[i];
                const double dz = w * (dp[i] - mean_dp);
                auto grow = glayer.gate.row(e);
                const auto row = layer.gate.row(e);
                for (std::size_t c = 0; c < spec.d_model; ++c) {
                    grow[c] += dz * lc.h_in[c];
                    dh[c] += dz * row[c];
                }

                const auto& ffn = layer.experts[e];
                auto& gffn = glayer.experts[e];
                std::fill(du.begin(), du.end(), 0.0);
                for (std::size_t r = 0; r < spec.d_model; ++r) {
                    const double gr = w * g[r];
                    const auto w2row = ffn.w2.row(r);
                    auto gw2row = gffn.w2.row(r);
                    for (std::size_t j = 0; j < spec.d_ff; ++j) {
                        gw2row[j] += gr * lc.act[i][j];
                        du[j] += gr * w2row[j];
                    }
                }
                for (std::size_t j = 0; j < spec.d_ff; ++j) {
                    da[j] = du[j] * silu_grad(lc.pre[i][j]);
                    const auto w1row = ffn.w1.row(j);
                    auto gw1row = gffn.w1.row(j);
                    for (std::size_t c = 0; c < spec.d_model; ++c) {
                        gw1row[c] += da[j] * lc.h_in[c];
                        dh[c] += da[j] * w1row[c];
                    }
                }
            }
            g = std::move(dh);
        }
        auto erow = grads.embed.row(p.input);
        for (std::size_t c = 0; c < spec.d_model; ++c) erow[c] += g[c];
    }
    return total * scale;
}

std::vector<TokenPair> next_token_pairs(const Corpus& corpus) {
    std::vector<TokenPair> out;
    for (const auto& s : corpus.sequences)
        for (std::size_t i = 0; i + 1 < s.tokens.size(); ++i) out.push_back({s.tokens[i], s.tokens[i + 1]});
    return out;
}

TrainResult train_toy(const MoEModel& model, const Corpus& corpus, const TrainOptions& options) {
    model.validate();
    corpus.validate();
    require(std::isfinite(options.learning_rate) && options.learning_rate > 0.0, ErrorCode::Configuration,
            "learning rate must be > 0");
    require(options.batch_size >= 1, ErrorCode::Configuration, "batch size must be >= 1");
    auto pairs = next_token_pairs(corpus);
    require(!pairs.empty(), ErrorCode::InvalidInput, "corpus has no next-token pairs (all sequences length 1)");

    TrainResult result{model, batch_loss(model, pairs), 0.0, {}};
    Rng rng(options.seed);
    std::vector<std::size_t> order(pairs.size());
    std::size_t cursor = order.size();
    Gradients grads = MoEModel::zeros(model.spec);
    std::vector<TokenPair> batch;

    for (std::uint32_t step = 0; step < options.steps; ++step) {
        batch.clear();
        while (batch.size() < options.batch_size) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            batch.push_back(pairs[order[cursor++]]);
        }
        double loss = 0.0;
        try {
            loss = loss_and_gradients(result.model, batch, grads);
        } catch (const Error& e) {
            fail(ErrorCode::TrainingFailure, "training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        require(std::isfinite(loss), ErrorCode::TrainingFailure,
                "training diverged at step " + std::to_string(step) + ": loss is not finite");
        result.step_losses.push_back(loss);
        const double lr = options.learning_rate;
        zip_weights(result.model, grads, [lr](double& w, double gw) { w -= lr * gw; });
    }
    try {
        result.final_loss = batch_loss(result.model, pairs);
    } catch (const Error& e) {
        fail(ErrorCode::TrainingFailure, "training diverged after step " + std::to_string(options.steps) + ": " + e.what());
    }
    require(std::isfinite(result.final_loss), ErrorCode::TrainingFailure,
            "training diverged after step " + std::to_string(options.steps) + ": loss is not finite");
    return result;
}

}  // namespace moelens
