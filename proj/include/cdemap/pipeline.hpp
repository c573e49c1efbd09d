#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/decomposer.hpp"
#include "cdemap/filter.hpp"
#include "cdemap/llm.hpp"
#include "cdemap/reranker.hpp"
#include "cdemap/reservoir.hpp"
#include "cdemap/retrieval.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

enum class OutcomeStatus { exact_match, reranked, reservoir_hit, na };

// "exact_match", "reranked", "reservoir_hit", "NA".
std::string_view outcome_status_name(OutcomeStatus s);
std::optional<OutcomeStatus> parse_outcome_status(std::string_view s);

struct ComponentOutcome {
    OutcomeStatus status = OutcomeStatus::na;
    std::vector<OmopId> omop_ids;     // one id except for reservoir hits
    std::optional<double> confidence; // reranked only
    std::optional<std::string> error; // code and message when a failure produced NA

    bool operator==(const ComponentOutcome&) const = default;
};

// One linkable piece of a decomposed entry.
struct ComponentQuery {
    std::string key;   // "base_entity", "categories[1]", "unit", ...
    std::string text;
    std::optional<std::string> domain_hint;

    bool operator==(const ComponentQuery&) const = default;
};

// Component key for an entry-level NA (invalid input or failed decomposition).
inline constexpr std::string_view kEntryComponent = "entry";

// Components in output order: base_entity, associated_entities[i],
// categories[i], unit, visit, method, formula. The base entity carries the
// decomposition's domain hint and the unit is routed as "Unit".
std::vector<ComponentQuery> enumerate_components(const DecomposedQuery& q);

struct TraceStep {
    std::size_t seq = 0;  // per-entry, strictly increasing in execution order
    std::string component;
    std::string stage;    // reservoir, retrieval, linking_rules, similarity_filter,
                          // exact_match, rerank, judge, enqueue, decompose, validate
    nlohmann::ordered_json detail;
    double elapsed_ms = 0.0;
};

struct ComponentResult {
    ComponentQuery query;
    ComponentOutcome outcome;
    std::vector<OmopId> ranking;  // post-filter ranking, best first
    std::size_t retrieval_calls = 0;
    std::size_t rerank_calls = 0;
    std::size_t judge_calls = 0;
    std::optional<Judgement> judgement;
    std::optional<ReviewId> review_id;
};

struct MappingResult {
    DataDictionaryEntry entry;
    std::optional<DecomposedQuery> decomposition;
    std::vector<ComponentResult> component_results;
    std::vector<TraceStep> trace;
    std::size_t decompose_calls = 0;

    const ComponentResult* component(std::string_view key) const;
    std::size_t rerank_calls() const;
    std::size_t llm_calls() const;
};

struct PipelineConfig {
    std::size_t k = kDefaultTopK;
    FilterConfig filter;
    RerankConfig rerank;
    DecomposeOptions decompose;

    void validate() const;
};

// Everything map_component needs. The store, index, bank and rules are
// shared read-only; the reservoir is optional.
struct PipelineContext {
    const ConceptStore& store;
    const RetrievalIndex& index;
    LLMProvider& llm;
    const ExampleBank& bank;
    Reservoir* reservoir = nullptr;
    PipelineConfig config;
};

class TraceRecorder {
public:
    TraceRecorder& step(std::string component, std::string stage, nlohmann::ordered_json detail = {},
                        double elapsed_ms = 0.0);
    std::vector<TraceStep> take() { return std::move(steps_); }
    const std::vector<TraceStep>& steps() const { return steps_; }

private:
    std::vector<TraceStep> steps_;
};

// Reservoir lookup, retrieval, linking rules, similarity filter, exact match
// or self-consistency rerank, then the judge gate into the reservoir.
// `directive_text` is matched against context rules (the refined query).
// Provider failures yield NA with the error recorded.
ComponentResult map_component(const ComponentQuery& q, const std::string& directive_text, PipelineContext& ctx,
                              TraceRecorder& trace);

MappingResult map_entry(const DataDictionaryEntry& entry, PipelineContext& ctx);

using ProgressFn = std::function<void(std::size_t completed, std::size_t total)>;

// Output order equals input order; entries run on up to `parallelism` threads.
std::vector<MappingResult> map_dictionary(const std::vector<DataDictionaryEntry>& entries, PipelineContext& ctx,
                                          std::size_t parallelism = 1, const ProgressFn& progress = {});

// Stable record layout (see docs/formats.md). Timings are only written when
// `timings` is set, so trace output without them is byte-reproducible.
struct ResultFormat {
    bool trace = true;
    bool timings = false;
};

nlohmann::ordered_json result_to_json(const MappingResult& r, const ConceptStore& store, const ResultFormat& fmt = {});
nlohmann::ordered_json results_to_json(const std::vector<MappingResult>& results, const ConceptStore& store,
                                       const ResultFormat& fmt = {});
// One JSON array, two-space indented, trailing newline.
std::string serialize_results(const std::vector<MappingResult>& results, const ConceptStore& store,
                              const ResultFormat& fmt = {});
void write_results(const std::string& path, const std::vector<MappingResult>& results, const ConceptStore& store,
                   const ResultFormat& fmt = {});

}  // namespace cdemap
