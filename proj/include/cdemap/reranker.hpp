#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdemap/filter.hpp"
#include "cdemap/llm.hpp"
#include "cdemap/retrieval.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

enum class RelevanceCategory { not_relevant, partially_relevant, highly_relevant, exact_match };

std::string_view category_name(RelevanceCategory c);

// Step-2 bands over integer step-1 scores: 1-4 not relevant, 5-7 partially
// relevant, 8-9 highly relevant, 10 exact match. Throws OutOfRange outside 1..10.
RelevanceCategory classify(int score);

struct RerankConfig {
    int n = 3;             // self-consistency rounds
    int t = 8;             // a round votes 1 when its score >= t
    double tau_rel = 0.85; // relevant when mean vote > tau_rel
    std::uint64_t base_seed = 0;

    void validate() const;
};

// What the rerank prompt shows for one candidate.
struct RerankItem {
    OmopId omop_id = 0;
    std::string name;
    std::string vocabulary;
    std::string semantic_type;
};

std::vector<RerankItem> rerank_items(const std::vector<FilteredCandidate>& candidates, const ConceptStore& store);

// Instruction (with directives) -> numbered candidates -> query.
std::string build_rerank_prompt(std::string_view query_text, const std::vector<RerankItem>& candidates,
                                const std::vector<std::string>& directives);

struct RoundScores {
    std::vector<int> scores;
    int provider_calls = 0;
    bool reprompted = false;
    std::vector<std::size_t> defaulted;  // indexes that fell back to score 1
};

// Parses "<index>:<score>" pairs for `count` candidates. Missing or
// out-of-range entries are reported in `invalid` and left at 0.
std::vector<int> parse_scores(std::string_view completion, std::size_t count, std::vector<std::size_t>& invalid);

// One scoring round. Invalid output triggers a single reprompt; entries
// still invalid afterwards get score 1. Throws ProviderFailure only on
// transport failure.
RoundScores score_round(std::string_view query_text, const std::vector<RerankItem>& candidates,
                        const std::vector<std::string>& directives, LLMProvider& provider, std::uint64_t seed);

struct ScoredCandidate {
    Candidate candidate;
    std::vector<int> relevance_scores;
    std::vector<RelevanceCategory> categories;
    std::vector<int> binary_votes;
    double confidence = 0.0;

    double mean_score() const;
};

struct SelfConsistencyResult {
    std::vector<ScoredCandidate> scored;
    int provider_calls = 0;
    int failed_rounds = 0;
};

// Builds a ScoredCandidate from per-round scores with the binarization and
// averaging rules.
ScoredCandidate score_candidate(const Candidate& candidate, const std::vector<int>& round_scores, int t);

// Runs score_round n times with seeds base_seed + j. A round whose provider
// call fails is retried once, then counted as all-zero votes; if every round
// fails the ProviderFailure propagates.
SelfConsistencyResult self_consistency(std::string_view query_text, const std::vector<FilteredCandidate>& candidates,
                                       const ConceptStore& store, LLMProvider& provider, const RerankConfig& config);

struct MatchDecision {
    std::optional<ScoredCandidate> selected;  // empty means NA

    bool is_na() const { return !selected.has_value(); }
};

// Highest-confidence candidate whose confidence exceeds tau_rel; ties by
// higher mean score, then lower omop_id. NA when none qualifies.
MatchDecision select_top(const std::vector<ScoredCandidate>& scored, const RerankConfig& config);

// Candidates in decision order (confidence, mean score, omop_id).
std::vector<ScoredCandidate> decision_order(std::vector<ScoredCandidate> scored);

inline constexpr std::string_view kNotAvailable = "NA";

}  // namespace cdemap
