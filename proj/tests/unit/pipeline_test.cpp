#include <gtest/gtest.h>

#include <map>

#include "cdemap/errors.hpp"
#include "cdemap/pipeline.hpp"
#include "cdemap/providers.hpp"
#include "fixture_env.hpp"

using namespace cdemap;
using cdemap::testing::fixture_env;
using cdemap::testing::fixture_llm;
using cdemap::testing::fixture_path;

namespace {

const MappingResult& by_label(const std::vector<MappingResult>& rs, const std::string& label) {
    for (const auto& r : rs)
        if (r.entry.label == label) return r;
    throw std::runtime_error("no result for " + label);
}

std::vector<std::string> stages(const MappingResult& r, const std::string& key) {
    std::vector<std::string> out;
    for (const auto& s : r.trace)
        if (s.component == key) out.push_back(s.stage);
    return out;
}

}  // namespace

TEST(Pipeline, ReplayMatchesGoldenFile) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto results = map_dictionary(env.dictionary, ctx, 1);
    EXPECT_EQ(serialize_results(results, env.kb.store), cdemap::testing::read_file(fixture_path("golden_results.json")));
}

TEST(Pipeline, ParallelRunsAreByteIdentical) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto one = serialize_results(map_dictionary(env.dictionary, ctx, 1), env.kb.store);
    auto three = serialize_results(map_dictionary(env.dictionary, ctx, 3), env.kb.store);
    auto eight = serialize_results(map_dictionary(env.dictionary, ctx, 8), env.kb.store);
    EXPECT_EQ(one, three);
    EXPECT_EQ(one, eight);
}

TEST(Pipeline, WorkedDecompositionComponents) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto r = map_entry(env.dictionary[0], ctx);
    std::vector<std::string> keys;
    for (const auto& c : r.component_results) keys.push_back(c.query.key);
    EXPECT_EQ(keys, (std::vector<std::string>{"base_entity", "associated_entities[0]", "categories[0]", "categories[1]",
                                              "categories[2]", "visit"}));
    std::map<std::string, OmopId> want{{"base_entity", 100}, {"associated_entities[0]", 540}, {"categories[0]", 530},
                                       {"categories[1]", 531}, {"categories[2]", 532}, {"visit", 120}};
    for (const auto& c : r.component_results) {
        EXPECT_EQ(c.outcome.status, OutcomeStatus::exact_match) << c.query.key;
        EXPECT_EQ(c.outcome.omop_ids, std::vector<OmopId>{want[c.query.key]}) << c.query.key;
        EXPECT_EQ(c.rerank_calls, 0u) << c.query.key;
    }
    EXPECT_EQ(r.decompose_calls, 1u);
}

TEST(Pipeline, ExpectedOutcomesPerEntry) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto rs = map_dictionary(env.dictionary, ctx, 2);
    struct Want {
        std::string label, key;
        OutcomeStatus status;
        std::vector<OmopId> ids;
    };
    std::vector<Want> wants{
        {"NT-proBNP", "base_entity", OutcomeStatus::exact_match, {500}},
        {"NT-proBNP", "unit", OutcomeStatus::exact_match, {400}},
        {"man", "base_entity", OutcomeStatus::exact_match, {8507}},
        {"history of myocardial infarction", "base_entity", OutcomeStatus::reranked, {101}},
        {"Coreg daily dose", "base_entity", OutcomeStatus::exact_match, {301}},
        {"systolic BP", "unit", OutcomeStatus::exact_match, {420}},
        {"glycated haemoglobin A1c", "base_entity", OutcomeStatus::reranked, {520}},
        {"glycated haemoglobin A1c", "unit", OutcomeStatus::exact_match, {430}},
        {"zzq flux index", "entry", OutcomeStatus::na, {}},
        {"overall quality of life", "base_entity", OutcomeStatus::na, {}},
        {"exertional chest tightness", "base_entity", OutcomeStatus::na, {}},
    };
    for (const auto& w : wants) {
        const auto* c = by_label(rs, w.label).component(w.key);
        ASSERT_NE(c, nullptr) << w.label << " " << w.key;
        EXPECT_EQ(c->outcome.status, w.status) << w.label << " " << w.key;
        EXPECT_EQ(c->outcome.omop_ids, w.ids) << w.label << " " << w.key;
        if (w.status == OutcomeStatus::exact_match) EXPECT_EQ(c->rerank_calls, 0u) << w.label;
        if (w.status == OutcomeStatus::reranked) EXPECT_GT(c->rerank_calls, 0u) << w.label;
    }
    // The chest-tightness candidate wins two of three rounds: confidence 2/3.
    const auto* chest = by_label(rs, "exertional chest tightness").component("base_entity");
    EXPECT_EQ(chest->ranking, std::vector<OmopId>{111});
    EXPECT_EQ(chest->rerank_calls, 3u);
    EXPECT_NE(by_label(rs, "zzq flux index").component("entry")->outcome.error.value_or("").find("DecompositionFailure"),
              std::string::npos);
}

TEST(Pipeline, StagesRunInOrder) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    Reservoir reservoir(&env.kb.store, cdemap::testing::counting_clock());
    auto ctx = env.context(*llm, &reservoir);
    auto r = map_entry(env.dictionary[3], ctx);  // history of myocardial infarction
    EXPECT_EQ(stages(r, "base_entity"), (std::vector<std::string>{"reservoir", "retrieval", "linking_rules",
                                                                  "similarity_filter", "rerank", "judge", "enqueue"}));
    EXPECT_EQ(stages(r, "categories[0]"), (std::vector<std::string>{"reservoir", "retrieval", "linking_rules",
                                                                    "similarity_filter", "exact_match", "judge",
                                                                    "enqueue"}));
    EXPECT_EQ(stages(r, "entry"), std::vector<std::string>{"decompose"});
    std::size_t seq = 0;
    for (const auto& s : r.trace) EXPECT_EQ(s.seq, ++seq);
}

TEST(Pipeline, DirectivesReachTheReranker) {
    const auto& env = fixture_env();
    bool saw = false;
    auto scripted = fixture_llm();
    FunctionLLMProvider spy([&](const std::string& p, double t, std::optional<std::uint64_t> s) {
        if (p.find("Directive: past-condition") != std::string::npos) saw = true;
        return scripted->complete(p, t, s);
    });
    auto ctx = env.context(spy);
    map_entry(env.dictionary[3], ctx);
    EXPECT_TRUE(saw);
}

// Approving the queued mappings makes a second run skip retrieval and the
// reranker for every approved label.
TEST(Pipeline, WarmReservoirSkipsReranking) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    Reservoir reservoir(&env.kb.store, cdemap::testing::counting_clock());
    auto ctx = env.context(*llm, &reservoir);
    auto cold = map_dictionary(env.dictionary, ctx, 1);
    std::size_t cold_rerank = 0;
    for (const auto& r : cold) cold_rerank += r.rerank_calls();
    EXPECT_GT(cold_rerank, 0u);
    for (const auto& e : reservoir.list_pending(1, 1000)) reservoir.apply_decision(e.review_id, ReviewDecision::approve(), "ana");

    auto warm = map_dictionary(env.dictionary, ctx, 1);
    for (const auto& r : warm)
        for (const auto& c : r.component_results) {
            if (!reservoir.lookup(c.query.text)) continue;
            EXPECT_EQ(c.outcome.status, OutcomeStatus::reservoir_hit) << c.query.text;
            EXPECT_EQ(c.rerank_calls, 0u) << c.query.text;
            EXPECT_EQ(c.judge_calls, 0u) << c.query.text;
            EXPECT_EQ(c.retrieval_calls, 0u) << c.query.text;
        }
    const auto* mi = by_label(warm, "history of myocardial infarction").component("base_entity");
    EXPECT_EQ(mi->outcome.status, OutcomeStatus::reservoir_hit);
    EXPECT_EQ(mi->outcome.omop_ids, std::vector<OmopId>{101});
    EXPECT_EQ(by_label(warm, "glycated haemoglobin A1c").rerank_calls(), 0u);
}

TEST(Pipeline, RerankFailureIsolatedToComponent) {
    const auto& env = fixture_env();
    auto scripted = fixture_llm();
    FunctionLLMProvider flaky([&](const std::string& p, double t, std::optional<std::uint64_t> s) -> std::string {
        if (p.find("### Task\nRate how relevant") == 0) throw ProviderFailure("injected");
        return scripted->complete(p, t, s);
    });
    auto ctx = env.context(flaky);
    auto r = map_entry(env.dictionary[6], ctx);  // glycated haemoglobin A1c
    const auto* base = r.component("base_entity");
    EXPECT_EQ(base->outcome.status, OutcomeStatus::na);
    EXPECT_NE(base->outcome.error.value_or("").find("ProviderFailure"), std::string::npos);
    EXPECT_EQ(r.component("unit")->outcome.status, OutcomeStatus::exact_match);
}

TEST(Pipeline, JudgeFailureKeepsMapping) {
    const auto& env = fixture_env();
    auto scripted = fixture_llm();
    FunctionLLMProvider flaky([&](const std::string& p, double t, std::optional<std::uint64_t> s) -> std::string {
        if (p.find("### Task\nDecide whether") == 0) throw ProviderFailure("judge down");
        return scripted->complete(p, t, s);
    });
    Reservoir reservoir(&env.kb.store, cdemap::testing::counting_clock());
    auto ctx = env.context(flaky, &reservoir);
    auto r = map_entry(env.dictionary[2], ctx);  // man
    EXPECT_EQ(r.component("base_entity")->outcome.status, OutcomeStatus::exact_match);
    EXPECT_FALSE(r.component("base_entity")->review_id);
    EXPECT_TRUE(reservoir.entries().empty());
}

TEST(Pipeline, InvalidEntryIsEntryLevelNa) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    DataDictionaryEntry e;
    e.name = "blank";
    e.label = "   ";
    auto r = map_entry(e, ctx);
    ASSERT_EQ(r.component_results.size(), 1u);
    EXPECT_EQ(r.component_results[0].query.key, "entry");
    EXPECT_EQ(r.component_results[0].outcome.status, OutcomeStatus::na);
    EXPECT_NE(r.component_results[0].outcome.error.value_or("").find("InvalidEntry"), std::string::npos);
}

TEST(Pipeline, TimingsOnlyWhenRequested) {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto r = map_entry(env.dictionary[2], ctx);
    auto plain = result_to_json(r, env.kb.store);
    auto timed = result_to_json(r, env.kb.store, ResultFormat{true, true});
    auto bare = result_to_json(r, env.kb.store, ResultFormat{false, false});
    EXPECT_FALSE(plain["trace"]["steps"][0].contains("elapsed_ms"));
    EXPECT_TRUE(timed["trace"]["steps"][0].contains("elapsed_ms"));
    EXPECT_FALSE(bare.contains("trace"));
}

TEST(Pipeline, ConfigValidation) {
    PipelineConfig c;
    c.k = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.filter.tau = 1.2;
    EXPECT_THROW(c.validate(), InvalidConfig);
}
