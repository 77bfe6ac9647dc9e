// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelens/corpus.hpp"
#include "moelens/model.hpp"

namespace moelens {

struct TrainOptions {
    double learning_rate = 0.05;
    std::uint32_t steps = 200;
    std::uint32_t batch_size = 16;
    std::uint64_t seed = 0;
};

/// One next-token example: predict `target` from `input`.
struct TokenPair {
    TokenId input = 0;
    TokenId target = 0;
};

struct TrainResult {
    MoEModel model;
    double initial_loss = 0.0;  // mean cross-entropy over the corpus before training
    double final_loss = 0.0;    // and after
    std::vector<double> step_losses;
};

/// Gradients with the same shapes as the model's weights.
using Gradients = MoEModel;

/// Mean next-token cross-entropy (nats) over `pairs`.
double batch_loss(const MoEModel& model, std::span<const TokenPair> pairs);

/// Mean cross-entropy and its gradient. Top-k membership is treated as fixed,
/// so the gate gradient flows only through the renormalised probabilities of
/// the selected experts.
double loss_and_gradients(const MoEModel& model, std::span<const TokenPair> pairs, Gradients& grads);

/// All (token, next token) pairs of the corpus in corpus order.
std::vector<TokenPair> next_token_pairs(const Corpus& corpus);

/// Plain SGD over shuffled next-token pairs; the batch order depends only on
/// options.seed. Throws TrainingFailure naming the step when the loss
/// diverges.
TrainResult train_toy(const MoEModel& model, const Corpus& corpus, const TrainOptions& options);

}  // namespace moelens
