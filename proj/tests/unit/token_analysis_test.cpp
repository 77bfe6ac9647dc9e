// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "moelens/corpus.hpp"
#include "moelens/error.hpp"
#include "moelens/planted.hpp"
#include "moelens/rng.hpp"
#include "moelens/token_analysis.hpp"
#include "oracle.hpp"

using namespace moelens;

namespace {
using Choices = std::vector<TraceChoice>;
Choices pick(std::uint32_t e) { return Choices{{e, 1.0}}; }
}  // namespace

TEST(PositionBin, Edges) {
    EXPECT_EQ(position_bin(0.0), 0u);
    EXPECT_EQ(position_bin(0.2), 1u);
    EXPECT_EQ(position_bin(0.6), 3u);
    EXPECT_EQ(position_bin(0.8), 4u);
    EXPECT_EQ(position_bin(1.0), 4u);
    EXPECT_EQ(position_bin(-0.1), 0u);
    EXPECT_EQ(position_bin(3.0 / 5.0), 3u);
}

TEST(PositionBins, AllAtStart) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    for (int s = 0; s < 3; ++s)
        oracle::add_sequence(t, "s" + std::to_string(s), "a", std::vector<TokenId>(10, 1),
                             [](std::size_t p, std::uint32_t) { return pick(p == 0 ? 0 : 1); });
    const auto r = position_bins(t, {{0, 0}}, "a");
    EXPECT_EQ(r.total, 3u);
    EXPECT_FALSE(r.zero_support);
    EXPECT_EQ(r.fractions, (std::array<double, 5>{1, 0, 0, 0, 0}));
}

TEST(PositionBins, LengthFiveSequenceFillsEachBin) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    oracle::add_sequence(t, "s", "a", {1, 2, 3, 4, 5}, [](std::size_t, std::uint32_t) { return pick(0); });
    const auto r = position_bins(t, {{0, 0}}, "a");
    for (double f : r.fractions) EXPECT_DOUBLE_EQ(f, 0.2);
    EXPECT_EQ(r.counts, (std::array<std::uint64_t, 5>{1, 1, 1, 1, 1}));
}

TEST(PositionBins, UniformPositionsAreFlat) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    Rng rng(17);
    std::uint64_t tokens = 0;
    for (int s = 0; tokens < 60000; ++s) {
        const auto len = 20 + rng.below(200);
        tokens += len;
        oracle::add_sequence(t, std::to_string(s), "a", std::vector<TokenId>(len, 1),
                             [&](std::size_t, std::uint32_t) { return pick(rng.below(2) ? 0 : 1); });
    }
    const auto r = position_bins(t, {{0, 0}}, "a");
    double sum = 0.0;
    for (double f : r.fractions) {
        EXPECT_NEAR(f, 0.2, 0.03);
        sum += f;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(PositionBins, NoQualifyingTokensIsZeroSupport) {
    auto t = oracle::synthetic_trace(1, 3, 1, {"a", "b"});
    oracle::add_sequence(t, "s", "a", {1, 2}, [](std::size_t, std::uint32_t) { return pick(0); });
    const auto r = position_bins(t, {{0, 2}}, "a");
    EXPECT_TRUE(r.zero_support);
    EXPECT_EQ(r.total, 0u);
    EXPECT_TRUE(position_bins(t, {{0, 0}}, "b").zero_support);
}

TEST(Association, AlwaysRoutedTokenScoresTwoBits) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    // token 7 appears 5 times, always routed; 15 other tokens never routed:
    // base rate 5/20 = 0.25.
    std::vector<TokenId> toks;
    for (int i = 0; i < 20; ++i) toks.push_back(i < 5 ? 7 : 100 + i);
    oracle::add_sequence(t, "s", "a", toks, [&](std::size_t p, std::uint32_t) { return pick(toks[p] == 7 ? 0 : 1); });
    const auto tab = token_expert_association(t, {{0, 0}}, 5);
    ASSERT_EQ(tab.rows.size(), 1u);
    EXPECT_EQ(tab.rows[0].token, "t7");
    EXPECT_DOUBLE_EQ(tab.rows[0].base_rate, 0.25);
    EXPECT_DOUBLE_EQ(tab.rows[0].score, 2.0);
}

TEST(Association, IndependentTokenScoresZero) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    std::vector<TokenId> toks;
    for (int i = 0; i < 40; ++i) toks.push_back(i % 2 ? 3 : 4);
    oracle::add_sequence(t, "s", "a", toks, [](std::size_t p, std::uint32_t) { return pick((p / 2) % 2); });
    const auto tab = token_expert_association(t, {{0, 0}}, 5);
    ASSERT_EQ(tab.rows.size(), 2u);
    for (const auto& r : tab.rows) EXPECT_EQ(r.score, 0.0);
}

TEST(Association, MinCountFiltersAndOrdering) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    std::vector<TokenId> toks{1, 1, 1, 2, 2, 2, 2, 3};
    oracle::add_sequence(t, "s", "a", toks, [&](std::size_t p, std::uint32_t) { return pick(toks[p] == 2 ? 0 : p % 2); });
    const auto tab = token_expert_association(t, {{0, 0}}, 2);
    ASSERT_EQ(tab.rows.size(), 2u);
    EXPECT_EQ(tab.rows[0].token, "t2");
    EXPECT_THROW(token_expert_association(t, {{0, 0}}, 0), Error);
    EXPECT_THROW(token_expert_association(t, {{0, 5}}, 1), Error);
}

TEST(Association, NoActivationIsZeroSupport) {
    auto t = oracle::synthetic_trace(1, 3, 1, {"a"});
    oracle::add_sequence(t, "s", "a", {1, 1, 1, 1, 1}, [](std::size_t, std::uint32_t) { return pick(0); });
    const auto tab = token_expert_association(t, {{0, 2}}, 1);
    EXPECT_TRUE(tab.zero_support);
    EXPECT_TRUE(tab.rows.empty());
}

TEST(Association, PlantedDomainTokensRankFirst) {
    auto spec = default_planted_spec();
    const auto [m, gt] = build_planted_model(spec);
    const auto trace = run_trace(m, synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11}));
    const auto tab = token_expert_association(trace, gt.domain_experts.at("alpha"), 1);
    std::set<std::string> alpha;
    for (auto t : spec.domains[0].tokens) alpha.insert(token_text(t));
    bool in_alpha = true;
    for (const auto& r : tab.rows) {
        const bool is_alpha = alpha.contains(r.token);
        if (is_alpha) {
            EXPECT_TRUE(in_alpha) << r.token << " ranked below a non-alpha token";
            EXPECT_GT(r.score, 0.0);
        }
        in_alpha = in_alpha && is_alpha;
    }
}
