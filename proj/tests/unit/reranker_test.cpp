#include <gtest/gtest.h>

#include <set>

#include "cdemap/errors.hpp"
#include "cdemap/llm.hpp"
#include "cdemap/providers.hpp"
#include "cdemap/reranker.hpp"
#include "exhaustive.hpp"
#include "fixture_env.hpp"

using namespace cdemap;

namespace {

FilteredCandidate fc(OmopId id) {
    Candidate c;
    c.omop_id = id;
    return {c, "", {}, std::nullopt};
}

}  // namespace

TEST(Reranker, CategoryBoundaries) {
    EXPECT_EQ(classify(4), RelevanceCategory::not_relevant);
    EXPECT_EQ(classify(5), RelevanceCategory::partially_relevant);
    EXPECT_EQ(classify(7), RelevanceCategory::partially_relevant);
    EXPECT_EQ(classify(8), RelevanceCategory::highly_relevant);
    EXPECT_EQ(classify(10), RelevanceCategory::exact_match);
    EXPECT_THROW(classify(0), OutOfRange);
    EXPECT_THROW(classify(11), OutOfRange);
}

TEST(Reranker, ParseScoresFlagsMissingAndOutOfRange) {
    std::vector<std::size_t> invalid;
    auto s = parse_scores("1:9, 2 = 11\n3:4 1:2 7:10", 4, invalid);
    EXPECT_EQ(s, (std::vector<int>{9, 0, 4, 0}));
    EXPECT_EQ(invalid, (std::vector<std::size_t>{1, 3}));
}

TEST(Reranker, ScoreCandidateBinarizesAtThreshold) {
    Candidate c;
    auto sc = score_candidate(c, {8, 7, 10}, 8);
    EXPECT_EQ(sc.binary_votes, (std::vector<int>{1, 0, 1}));
    EXPECT_DOUBLE_EQ(sc.confidence, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(sc.mean_score(), 25.0 / 3.0);
}

// Strict inequality: confidence exactly tau_rel is not enough.
TEST(Reranker, ConfidenceMustExceedThreshold) {
    Candidate c;
    c.omop_id = 1;
    RerankConfig cfg;
    cfg.n = 2;
    cfg.tau_rel = 0.5;
    EXPECT_TRUE(select_top({score_candidate(c, {8, 1}, 8)}, cfg).is_na());
    EXPECT_FALSE(select_top({score_candidate(c, {8, 8}, 8)}, cfg).is_na());
    cfg.tau_rel = 1.0;
    EXPECT_TRUE(select_top({score_candidate(c, {10, 10}, 8)}, cfg).is_na());
}

TEST(Reranker, TieBreaksByMeanScoreThenId) {
    Candidate a, b, c;
    a.omop_id = 30;
    b.omop_id = 20;
    c.omop_id = 10;
    RerankConfig cfg;
    auto pick = select_top({score_candidate(a, {9, 9, 9}, 8), score_candidate(b, {10, 9, 9}, 8),
                            score_candidate(c, {8, 8, 8}, 8)},
                           cfg);
    EXPECT_EQ(pick.selected->candidate.omop_id, 20);
    pick = select_top({score_candidate(a, {9, 9, 9}, 8), score_candidate(b, {9, 9, 9}, 8)}, cfg);
    EXPECT_EQ(pick.selected->candidate.omop_id, 20);
    auto order = decision_order({score_candidate(c, {8, 8, 8}, 8), score_candidate(a, {9, 9, 9}, 8),
                                 score_candidate(b, {1, 1, 1}, 8)});
    EXPECT_EQ(order[0].candidate.omop_id, 30);
    EXPECT_EQ(order[2].candidate.omop_id, 20);
}

TEST(Reranker, SelectTopMatchesOracleOnEveryVoteMatrix) {
    auto rep = cdemap::testing::check_select_top_exhaustively({2, 8, 10}, {0.85, 0.5, 0.3});
    EXPECT_GT(rep.cases, 100000u);
    EXPECT_EQ(rep.disagreements, 0u) << rep.first_disagreement;
}

TEST(Reranker, RoundsUseConsecutiveSeeds) {
    const auto& env = cdemap::testing::fixture_env();
    std::multiset<std::uint64_t> seeds;
    FunctionLLMProvider llm([&](const std::string&, double temperature, std::optional<std::uint64_t> seed) {
        EXPECT_EQ(temperature, 0.0);
        seeds.insert(*seed);
        return std::string("1:9 2:3");
    });
    RerankConfig cfg;
    cfg.base_seed = 40;
    auto r = self_consistency("q", {fc(100), fc(110)}, env.kb.store, llm, cfg);
    EXPECT_EQ(seeds, (std::multiset<std::uint64_t>{40, 41, 42}));
    EXPECT_EQ(r.provider_calls, 3);
    EXPECT_DOUBLE_EQ(r.scored[0].confidence, 1.0);
    EXPECT_DOUBLE_EQ(r.scored[1].confidence, 0.0);
}

TEST(Reranker, RepromptsOnceThenDefaultsToOne) {
    const auto& env = cdemap::testing::fixture_env();
    int calls = 0;
    FunctionLLMProvider llm([&](const std::string& prompt, double, std::optional<std::uint64_t>) {
        ++calls;
        bool retry = prompt.find("Your previous answer") != std::string::npos;
        return std::string(retry ? "1:9" : "garbage");
    });
    auto items = rerank_items({fc(100), fc(110)}, env.kb.store);
    auto round = score_round("q", items, {}, llm, 0);
    EXPECT_EQ(calls, 2);
    EXPECT_TRUE(round.reprompted);
    EXPECT_EQ(round.scores, (std::vector<int>{9, 1}));
    EXPECT_EQ(round.defaulted, std::vector<std::size_t>{1});
}

TEST(Reranker, FailedRoundCountsAsNoVotes) {
    const auto& env = cdemap::testing::fixture_env();
    FunctionLLMProvider llm([&](const std::string&, double, std::optional<std::uint64_t> seed) -> std::string {
        if (*seed == 1) throw ProviderFailure("timeout");
        return "1:10";
    });
    auto r = self_consistency("q", {fc(100)}, env.kb.store, llm, RerankConfig{});
    EXPECT_EQ(r.failed_rounds, 1);
    EXPECT_EQ(r.scored[0].relevance_scores, (std::vector<int>{10, 1, 10}));
    EXPECT_TRUE(select_top(r.scored, RerankConfig{}).is_na());

    FunctionLLMProvider dead([](const std::string&, double, std::optional<std::uint64_t>) -> std::string {
        throw ProviderFailure("down");
    });
    EXPECT_THROW(self_consistency("q", {fc(100)}, env.kb.store, dead, RerankConfig{}), ProviderFailure);
}

TEST(Reranker, PromptListsCandidatesAndDirectives) {
    const auto& env = cdemap::testing::fixture_env();
    auto p = build_rerank_prompt("history of MI", rerank_items({fc(101)}, env.kb.store), {"past-condition"});
    EXPECT_NE(p.find("Directive: past-condition\n"), std::string::npos);
    EXPECT_NE(p.find("1. Old myocardial infarction (vocabulary: SNOMED; semantic type: Disorder)\n"), std::string::npos);
    EXPECT_EQ(prompt_section(p, "Query"), std::optional<std::string>("history of MI\n"));
}

TEST(Reranker, ConfigValidation) {
    RerankConfig c;
    c.n = 0;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = {};
    c.t = 11;
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = {};
    c.tau_rel = 0.0;
    EXPECT_THROW(c.validate(), InvalidConfig);
}
