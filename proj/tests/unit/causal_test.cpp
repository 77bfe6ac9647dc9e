// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "moelens/causal.hpp"
#include "moelens/corpus.hpp"
#include "moelens/error.hpp"
#include "moelens/planted.hpp"
#include "oracle.hpp"

using namespace moelens;

namespace {

CausalEffectMatrix one_layer(const std::vector<double>& ce) {
    CausalEffectMatrix m;
    m.n_layers = 1;
    m.n_experts = static_cast<std::uint32_t>(ce.size());
    for (std::uint32_t e = 0; e < ce.size(); ++e) m.cells.push_back({0, e, ce[e], 10});
    return m;
}

Corpus small_corpus() { return Corpus{{{"a", {0, 1, 2, 3}}, {"b", {10, 11, 12, 13}}}}; }

}  // namespace

TEST(KL, Identity) {
    const std::vector<double> p{0.5, 0.5};
    EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(KL, OneBit) { EXPECT_DOUBLE_EQ(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), 1.0); }

TEST(KL, HandArithmetic) {
    const double want = 0.9 * std::log2(1.5) + 0.1 * std::log2(0.25);
    const double got = kl_divergence(std::vector<double>{0.9, 0.1}, std::vector<double>{0.6, 0.4});
    EXPECT_NEAR(got, want, 1e-15);
    EXPECT_NEAR(got, 0.32646625, 1e-8);
    EXPECT_NEAR(got, 0.326501, 1e-4);
}

TEST(KL, ZeroInQIsFloored) {
    const double got = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
    EXPECT_NEAR(got, 0.5 * std::log2(0.5 / 1e-12) + 0.5 * std::log2(0.5), 1e-9);
    EXPECT_TRUE(std::isfinite(got));
}

TEST(KL, InvalidInputs) {
    EXPECT_THROW(kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), Error);
    EXPECT_THROW(kl_divergence(std::vector<double>{0.5, 0.4}, std::vector<double>{0.5, 0.5}), Error);
    EXPECT_THROW(kl_divergence(std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}), Error);
}

TEST(CausalEffect, MatchesBruteForceOracle) {
    const auto m = init_random(ModelSpec{2, 4, 1, 8, 6, 16, 12});
    const Corpus c{{{"a", {0, 1, 2, 3}}, {"b", {8, 9, 10, 11}}}};
    for (int sign : {-1, 1}) {
        const auto mat = causal_effect_matrix(m, c, 1.0, sign);
        for (std::uint32_t l = 0; l < 2; ++l)
            for (std::uint32_t e = 0; e < 4; ++e)
                EXPECT_NEAR(mat.at(l, e).ce, oracle::causal_effect(m, c, l, e, 1.0, sign), 1e-9)
                    << "sign " << sign << " cell " << l << "," << e;
    }
}

TEST(CausalEffect, SingleCellAgreesWithMatrix) {
    const auto [m, gt] = build_planted_model(oracle::small_planted_spec());
    const auto c = small_corpus();
    const auto mat = causal_effect_matrix(m, c, 1.0, -1);
    EXPECT_EQ(causal_effect(m, c, 0, 2, 1.0, -1), mat.at(0, 2).ce);
    EXPECT_EQ(mat.at(0, 2).n_examples, 8u);
}

TEST(CausalEffect, NeverSelectedExpertHasExactlyZero) {
    const auto [m, gt] = build_planted_model(oracle::small_planted_spec());
    const auto c = small_corpus();
    const auto tr = run_trace(m, c);
    const auto mat = causal_effect_matrix(m, c, 1.0, -1);
    int checked = 0;
    for (std::uint32_t l = 0; l < 2; ++l)
        for (std::uint32_t e = 0; e < 4; ++e) {
            bool used = false;
            for (const auto& r : tr.records) used |= r.layers[l].topk[0].expert == e;
            if (used) continue;
            EXPECT_EQ(mat.at(l, e).ce, 0.0);
            ++checked;
        }
    EXPECT_GT(checked, 0);
}

TEST(CausalEffect, ZeroMagnitudeIsZero) {
    const auto m = init_random(ModelSpec{2, 4, 1, 8, 6, 16, 12});
    const auto mat = causal_effect_matrix(m, small_corpus(), 0.0, -1);
    for (const auto& cell : mat.cells) EXPECT_EQ(cell.ce, 0.0);
}

TEST(CausalEffect, AllZeroExpertLayerGivesZero) {
    auto m = init_random(ModelSpec{2, 4, 2, 8, 6, 16, 12});
    for (auto& e : m.layers[1].experts) {
        e.w1.fill(0.0);
        e.w2.fill(0.0);
    }
    const auto mat = causal_effect_matrix(m, small_corpus(), 1.0, -1);
    for (std::uint32_t e = 0; e < 4; ++e) EXPECT_EQ(mat.at(1, e).ce, 0.0);
}

TEST(CausalEffect, Deterministic) {
    const auto m = init_random(ModelSpec{2, 4, 2, 8, 6, 16, 3});
    const auto a = causal_effect_matrix(m, small_corpus());
    const auto b = causal_effect_matrix(m, small_corpus());
    for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(a.cells[i].ce, b.cells[i].ce);
}

TEST(CausalEffect, BadArguments) {
    const auto m = init_random(ModelSpec{2, 4, 2, 8, 6, 16, 3});
    EXPECT_THROW(causal_effect_matrix(m, small_corpus(), 1.0, 0), Error);
    EXPECT_THROW(causal_effect_matrix(m, small_corpus(), -1.0, 1), Error);
    EXPECT_THROW(causal_effect_matrix(m, Corpus{}), Error);
    EXPECT_THROW(causal_effect(m, small_corpus(), 2, 0), Error);
}

TEST(CausalEffect, PlantedDriversHaveTopCE) {
    const auto spec = default_planted_spec();
    const auto [m, gt] = build_planted_model(spec);
    const auto mat = causal_effect_matrix(m, synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11}));
    for (const auto& d : gt.driver_experts)
        for (std::uint32_t e = 0; e < mat.n_experts; ++e)
            if (e != d.expert) EXPECT_GT(mat.at(d.layer, d.expert).ce, mat.at(d.layer, e).ce) << to_string(d);
}

TEST(Drivers, QuantileOfOneLayer) {
    auto d = identify_drivers(one_layer({0.9, 0.1, 0.1, 0.1}), 0.25);
    ASSERT_EQ(d.members.size(), 1u);
    EXPECT_EQ(d.members[0].expert, 0u);
    d = identify_drivers(one_layer({4, 3, 2, 1}), 0.5);
    ASSERT_EQ(d.members.size(), 2u);
    EXPECT_EQ(d.members[0].expert, 0u);
    EXPECT_EQ(d.members[1].expert, 1u);
    EXPECT_DOUBLE_EQ(d.thresholds[0], 2.5);
}

TEST(Drivers, DegenerateLayerWarns) {
    const auto d = identify_drivers(one_layer({0.0, 0.0, 0.0}), 0.05);
    EXPECT_TRUE(d.members.empty());
    EXPECT_EQ(d.warnings.size(), 1u);
}

TEST(Drivers, QuantileRange) {
    EXPECT_THROW(identify_drivers(one_layer({1, 2}), 0.0), Error);
    EXPECT_THROW(identify_drivers(one_layer({1, 2}), 1.0), Error);
}

TEST(Drivers, PlantedSetRecovered) {
    const auto spec = default_planted_spec();
    const auto [m, gt] = build_planted_model(spec);
    const auto mat = causal_effect_matrix(m, synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11}));
    EXPECT_EQ(identify_drivers(mat, 0.05).refs(), gt.driver_experts);
}

TEST(CausalRate, EmptyAndFullSets) {
    auto t = oracle::synthetic_trace(2, 3, 1, {"a"});
    oracle::add_sequence(t, "s", "a", {1, 2, 3, 4}, [](std::size_t p, std::uint32_t) {
        return std::vector<TraceChoice>{{static_cast<std::uint32_t>(p % 3), 1.0}};
    });
    EXPECT_EQ(causal_rate(t, {}), (std::vector<double>{0.0, 0.0}));
    std::vector<ExpertRef> all;
    for (std::uint32_t l = 0; l < 2; ++l)
        for (std::uint32_t e = 0; e < 3; ++e) all.push_back({l, e});
    EXPECT_EQ(causal_rate(t, all), (std::vector<double>{1.0, 1.0}));
}

TEST(CausalRate, Counting) {
    auto t = oracle::synthetic_trace(2, 4, 1, {"a"});
    std::vector<TokenId> toks(100, 1);
    oracle::add_sequence(t, "s", "a", toks, [](std::size_t p, std::uint32_t l) {
        return std::vector<TraceChoice>{{l == 1 && p < 40 ? 3u : 0u, 1.0}};
    });
    const auto r = causal_rate(t, {{1, 3}});
    EXPECT_EQ(r[0], 0.0);
    EXPECT_DOUBLE_EQ(r[1], 0.40);
}
