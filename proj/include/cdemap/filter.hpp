#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/embedding.hpp"
#include "cdemap/retrieval.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

struct ContextRule {
    std::string pattern;    // matched against the normalized query text
    std::string directive;  // tag handed to the reranker prompt

    bool operator==(const ContextRule&) const = default;
};

// Domain -> ordered allowed vocabularies, plus context annotations.
struct LinkingRules {
    int version = 1;
    std::map<std::string, std::vector<std::string>> routes;
    std::vector<ContextRule> context_rules;

    // Condition->SNOMED; Drug->RxNorm, ATC; Measurement->LOINC, SNOMED;
    // Unit->UCUM; "history of" -> past-condition.
    static LinkingRules defaults();
    static LinkingRules from_json(const nlohmann::json& j);
    static LinkingRules from_file(const std::string& path);
    nlohmann::ordered_json to_json() const;

    // Throws InvalidConfig when a route names a vocabulary missing from the
    // store or a context pattern is empty.
    void validate(const ConceptStore& store) const;

    // Route for a domain, matched case-insensitively; nullptr if unrouted.
    const std::vector<std::string>* route_for(std::string_view domain) const;

    // Human-readable rules for prompts.
    std::string describe() const;

    bool operator==(const LinkingRules&) const = default;
};

inline constexpr double kDefaultSimilarityThreshold = 0.5;

struct FilterConfig {
    double tau = kDefaultSimilarityThreshold;
    LinkingRules rules = LinkingRules::defaults();

    void validate() const;
};

struct FilteredCandidate {
    Candidate candidate;
    std::string vocabulary;
    std::vector<std::string> directives;
    std::optional<double> similarity;

    bool operator==(const FilteredCandidate&) const = default;
};

std::vector<FilteredCandidate> attach_vocabulary(const std::vector<Candidate>& candidates, const ConceptStore& store);

// Drops candidates whose vocabulary is outside the route for `domain_hint`
// (no hint or an unrouted domain passes everything through) and tags the
// survivors with the directives of matching context rules. Order preserved.
std::vector<FilteredCandidate> apply_linking_rules(const std::vector<FilteredCandidate>& candidates,
                                                   std::string_view query_text,
                                                   const std::optional<std::string>& domain_hint,
                                                   const LinkingRules& rules);

// Directives whose pattern occurs in the query text.
std::vector<std::string> matching_directives(std::string_view query_text, const LinkingRules& rules);

// Removes candidates with cosine(E(surface), E(query)) < tau; survivors carry
// their similarity. Order preserved.
std::vector<FilteredCandidate> filter_by_similarity(const std::vector<FilteredCandidate>& candidates,
                                                    std::string_view query_text, EmbeddingProvider& provider,
                                                    double tau);

}  // namespace cdemap
