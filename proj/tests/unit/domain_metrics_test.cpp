// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "moelens/corpus.hpp"
#include "moelens/domain_metrics.hpp"
#include "moelens/error.hpp"
#include "moelens/planted.hpp"
#include "moelens/rng.hpp"
#include "oracle.hpp"

using namespace moelens;

namespace {

using Choices = std::vector<TraceChoice>;

/// One layer, `n` tokens of domain "a"; expert 0 gets probability probs[i] at
/// token i, the remainder goes to expert 1.
RoutingTrace two_choice_trace(const std::vector<double>& probs) {
    auto t = oracle::synthetic_trace(1, 2, 2, {"a", "b"});
    std::vector<TokenId> toks(probs.size(), 1);
    oracle::add_sequence(t, "s", "a", toks, [&](std::size_t p, std::uint32_t) {
        const double q = probs[p];
        return q >= 0.5 ? Choices{{0, q}, {1, 1 - q}} : Choices{{1, 1 - q}, {0, q}};
    });
    return t;
}

ExpertScoreTable table_from_S(const std::vector<double>& S) {
    ExpertScoreTable t;
    t.n_layers = 1;
    t.n_experts = 1;
    for (std::size_t d = 0; d < S.size(); ++d) {
        t.domains.push_back("D" + std::to_string(d + 1));
        t.cells.push_back(ScoreCell{0, 0, t.domains.back(), 0.0, S[d], S[d], 10});
    }
    return t;
}

}  // namespace

TEST(BinaryEntropy, KnownValues) {
    EXPECT_EQ(binary_entropy(0.5), 1.0);
    EXPECT_EQ(binary_entropy(1.0), 0.0);
    EXPECT_EQ(binary_entropy(0.0), 0.0);
    EXPECT_NEAR(binary_entropy(0.9), 0.468996, 1e-6);
    EXPECT_NEAR(binary_entropy(0.7), 0.881291, 1e-6);
}

TEST(ExpertEntropy, AlwaysHalfIsOne) {
    const auto t = two_choice_trace({0.5, 0.5, 0.5});
    EXPECT_DOUBLE_EQ(expert_entropy(t, 0, 0, "a"), 1.0);
}

TEST(ExpertEntropy, TopOneIsZero) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a"});
    oracle::add_sequence(t, "s", "a", {1, 2, 3}, [](std::size_t, std::uint32_t) { return Choices{{0, 1.0}}; });
    EXPECT_EQ(expert_entropy(t, 0, 0, "a"), 0.0);
}

TEST(ExpertEntropy, MeanOfTwoTokens) {
    const auto t = two_choice_trace({0.9, 0.7});
    const double want = (oracle::h2(0.9) + oracle::h2(0.7)) / 2;
    EXPECT_NEAR(expert_entropy(t, 0, 0, "a"), want, 1e-12);
    EXPECT_NEAR(expert_entropy(t, 0, 0, "a"), 0.675143, 1e-6);
}

TEST(ExpertEntropy, NeverSelectedIsZero) {
    auto t = oracle::synthetic_trace(1, 3, 1, {"a"});
    oracle::add_sequence(t, "s", "a", {1, 2}, [](std::size_t, std::uint32_t) { return Choices{{0, 1.0}}; });
    EXPECT_EQ(expert_entropy(t, 0, 2, "a"), 0.0);
}

TEST(ActivationRate, Counting) {
    auto t = oracle::synthetic_trace(1, 3, 1, {"a"});
    std::vector<TokenId> toks(100, 4);
    oracle::add_sequence(t, "s", "a", toks, [](std::size_t p, std::uint32_t) {
        return p < 95 ? Choices{{0, 1.0}} : Choices{{1, 1.0}};
    });
    EXPECT_DOUBLE_EQ(activation_rate(t, 0, 0, "a"), 0.95);
    EXPECT_EQ(activation_rate(t, 0, 2, "a"), 0.0);
}

TEST(ActivationRate, EmptyDomainIsAnError) {
    auto t = oracle::synthetic_trace(1, 2, 1, {"a", "b"});
    oracle::add_sequence(t, "s", "a", {1}, [](std::size_t, std::uint32_t) { return Choices{{0, 1.0}}; });
    try {
        activation_rate(t, 0, 0, "b");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyDomain);
    }
}

TEST(ActivationRate, UniformTopOneTwoExpertsIsAboutHalf) {
    auto m = init_random(ModelSpec{1, 2, 1, 16, 4, 4000, 31});
    PlantedDomain a{"a", {}, std::nullopt};
    for (TokenId t = 0; t < 4000; ++t) a.tokens.push_back(t);
    Corpus c;
    for (TokenId t = 0; t < 4000; t += 8) c.sequences.push_back({"a", {t, t + 1, t + 2, t + 3, t + 4, t + 5, t + 6, t + 7}});
    const auto tr = run_trace(m, c);
    EXPECT_NEAR(activation_rate(tr, 0, 0, "a"), 0.5, 0.05);
    EXPECT_NEAR(activation_rate(tr, 0, 1, "a"), 0.5, 0.05);
}

TEST(Cwas, KnownValues) {
    EXPECT_EQ(cwas(0.0, 1.0), 1.0);
    EXPECT_EQ(cwas(1.0, 1.0), 0.0);
    EXPECT_NEAR(cwas(0.675143, 1.0), 0.324857, 1e-12);
    EXPECT_THROW(cwas(1.5, 0.5), Error);
    EXPECT_THROW(cwas(0.5, -0.1), Error);
}

TEST(ScoreTable, PlantedExpertsHoldMaximalS) {
    const auto spec = default_planted_spec();
    const auto [m, gt] = build_planted_model(spec);
    const auto table = score_table(run_trace(m, synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11})));
    for (std::size_t d = 0; d < table.domains.size(); ++d) {
        for (const auto& ref : gt.domain_experts.at(table.domains[d])) {
            const double s = table.at(ref.layer, ref.expert, d).S;
            for (std::uint32_t e = 0; e < table.n_experts; ++e)
                if (e != ref.expert) EXPECT_GT(s, table.at(ref.layer, e, d).S) << to_string(ref);
        }
    }
}

TEST(ScoreTable, UniformGateModelHasFlatScores) {
    // Near-uniform gates: tiny random logits.
    auto m = init_random(ModelSpec{2, 4, 2, 16, 4, 2000, 5});
    for (auto& layer : m.layers)
        for (auto& v : layer.gate.data()) v *= 1e-3;
    Corpus c;
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        Sequence s{i % 2 ? "a" : "b", {}};
        for (int j = 0; j < 10; ++j) s.tokens.push_back(static_cast<TokenId>(rng.below(2000)));
        c.sequences.push_back(s);
    }
    const auto table = score_table(run_trace(m, c));
    for (std::uint32_t l = 0; l < 2; ++l) {
        double lo = 1e9, hi = -1e9;
        for (std::uint32_t e = 0; e < 4; ++e)
            for (std::size_t d = 0; d < 2; ++d) {
                lo = std::min(lo, table.at(l, e, d).S);
                hi = std::max(hi, table.at(l, e, d).S);
            }
        EXPECT_LE(hi - lo, 0.1) << "layer " << l;
    }
}

TEST(Classify, DominantDomainGetsLabelAndRatio) {
    const auto tax = classify_experts(table_from_S({0.8, 0.1, 0.1}), 2.0);
    ASSERT_EQ(tax.size(), 1u);
    EXPECT_EQ(tax[0].kind, TaxonomyKind::Domain);
    EXPECT_EQ(tax[0].domain, "D1");
    EXPECT_EQ(tax[0].label(), "domain(D1)");
    EXPECT_NEAR(tax[0].preference_ratio, 8.0, 1e-12);
}

TEST(Classify, FlatScoresAreGeneral) {
    const auto tax = classify_experts(table_from_S({0.3, 0.3, 0.3}), 2.0, 0.2);
    EXPECT_EQ(tax[0].kind, TaxonomyKind::General);
    EXPECT_EQ(tax[0].label(), "general");
}

TEST(Classify, InBetweenIsUnlabeled) {
    const auto tax = classify_experts(table_from_S({0.5, 0.3, 0.1}), 2.0, 0.2);
    EXPECT_EQ(tax[0].kind, TaxonomyKind::Unlabeled);
}

TEST(Classify, OtherDomainsZeroGivesInfiniteRatio) {
    const auto tax = classify_experts(table_from_S({0.4, 0.0}));
    EXPECT_EQ(tax[0].kind, TaxonomyKind::Domain);
    EXPECT_TRUE(std::isinf(tax[0].preference_ratio));
}

TEST(Classify, PreconditionsAreEnforced) {
    try {
        classify_experts(table_from_S({0.5}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Classification);
    }
    try {
        classify_experts(table_from_S({0.5, 0.1}), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Configuration);
    }
}

TEST(Classify, PlantedModelRecoversPlantedSets) {
    const auto spec = default_planted_spec();
    const auto [m, gt] = build_planted_model(spec);
    const auto table = score_table(run_trace(m, synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11})));
    std::map<std::string, std::set<ExpertRef>> got;
    for (const auto& e : classify_experts(table))
        if (e.kind == TaxonomyKind::Domain) got[e.domain].insert({e.layer, e.expert});
    for (const auto& [name, refs] : gt.domain_experts)
        EXPECT_EQ(got[name], std::set<ExpertRef>(refs.begin(), refs.end())) << name;
    EXPECT_EQ(got.size(), gt.domain_experts.size());
}
