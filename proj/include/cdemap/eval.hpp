#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/decomposer.hpp"
#include "cdemap/pipeline.hpp"

namespace cdemap {

// One gold row. Several ids form a joint concept: a hit needs all of them.
struct GoldMapping {
    std::string label;
    std::string component;
    std::set<OmopId> gold_omop_ids;
};

// CSV `label,component,gold_omop_ids` with ids separated by '|'.
std::vector<GoldMapping> load_gold(const std::string& path);
std::vector<GoldMapping> parse_gold(const std::string& csv_text);

struct RankedResult {
    std::string label;
    std::string component;
    std::vector<OmopId> ranking;
};

// Rankings from pipeline results. Records without a trace raise MissingRanking.
std::vector<RankedResult> rankings_from_json(const nlohmann::json& results);
std::vector<RankedResult> rankings_from_results(const std::vector<MappingResult>& results);
std::vector<RankedResult> load_rankings(const std::string& results_path);

// Fraction of gold rows whose ids all appear in the top k.
double acc_at_k(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold, std::size_t k);

// Reported as NCGD; computed as NDCG@k with binary relevance,
// DCG = sum_{i<=k} rel_i / log2(i + 1), averaged over gold rows.
double ncgd_at_k(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold, std::size_t k);

double ndcg_binary(const std::vector<OmopId>& ranking, const std::set<OmopId>& relevant, std::size_t k);

// 1 - levenshtein / max length, over code points of the normalized strings.
// Two empty strings have similarity 1.
double edit_similarity(std::string_view a, std::string_view b);
std::size_t levenshtein(const std::u32string& a, const std::u32string& b);

inline constexpr double kFuzzyMatchThreshold = 0.8;

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PRF make_prf(std::size_t true_positive, std::size_t predicted, std::size_t gold);

struct DecompositionScores {
    PRF attribute;
    PRF value;
    double base_entity_accuracy = 0.0;
};

// Present attributes: base_entity, associated_entities, categories, unit,
// visit, method, formula.
std::set<std::string> present_attributes(const DecomposedQuery& q);

// Micro-averaged over aligned pairs. Attributes match by field name; values
// match within the same field when edit similarity >= 0.8, greedily one to
// one. Throws LengthMismatch when the lists differ in length.
DecompositionScores decomposition_scores(const std::vector<DecomposedQuery>& predicted,
                                         const std::vector<DecomposedQuery>& gold);

struct EvalReport {
    std::vector<std::size_t> ks;
    std::vector<double> acc;
    std::vector<double> ncgd;
    std::size_t gold_rows = 0;

    std::string to_text() const;
    nlohmann::ordered_json to_json() const;
};

EvalReport evaluate(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold,
                    const std::vector<std::size_t>& ks);

}  // namespace cdemap
