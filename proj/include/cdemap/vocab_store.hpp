#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cdemap {

using OmopId = std::int64_t;

struct Concept {
    OmopId omop_id = 0;
    std::string code;
    std::string name;
    std::string vocabulary;
    std::string domain;
    std::string semantic_type;
    // Surface keys (see text::normalize_surface). Never holds the key of `name`.
    std::set<std::string> synonyms;
    std::set<OmopId> parents;
    bool is_standard = false;

    bool operator==(const Concept&) const = default;
};

struct ConceptRelationship {
    OmopId source_omop_id = 0;
    OmopId target_omop_id = 0;
    std::string relation;

    bool operator==(const ConceptRelationship&) const = default;
};

// "Is a" edges populate Concept::parents (source is a child of target).
inline constexpr std::string_view kIsARelation = "Is a";

struct SynonymExpansionConfig {
    std::set<std::string> merge_relations{"Maps to", "Trade name"};
    std::set<std::string> flat_vocabularies{"UCUM"};
};

// Immutable, fully in-memory concept store. Construct through Builder or
// load_vocabulary(); once built it is safe to share between threads.
class ConceptStore {
public:
    class Builder {
    public:
        // `where` is used in error messages ("concepts.csv line 4").
        Builder& add_concept(Concept cpt, const std::string& where = {});
        Builder& add_synonym(OmopId id, std::string_view synonym, const std::string& where = {});
        Builder& add_relationship(ConceptRelationship rel, const std::string& where = {});
        // Validates references and closes the store.
        ConceptStore build();

    private:
        std::vector<Concept> concepts_;
        std::map<OmopId, std::string> id_where_;
        std::map<std::pair<std::string, std::string>, std::string> code_where_;
        std::vector<std::pair<std::pair<OmopId, std::string>, std::string>> synonyms_;
        std::vector<std::pair<ConceptRelationship, std::string>> relationships_;
    };

    ConceptStore() = default;

    const Concept& get_concept(OmopId id) const;
    const Concept& lookup_by_code(std::string_view vocabulary, std::string_view code) const;
    const Concept* find(OmopId id) const;
    bool contains(OmopId id) const { return by_id_.count(id) != 0; }

    // All concepts whose name or synonyms match `surface` after
    // normalization, ascending by omop_id.
    std::vector<const Concept*> find_exact(std::string_view surface) const;

    // Name first, then synonyms in key order.
    std::vector<std::string> surface_forms(const Concept& c) const;

    const std::vector<Concept>& concepts() const { return concepts_; }
    const std::vector<ConceptRelationship>& relationships() const { return relationships_; }
    std::set<std::string> vocabularies() const;
    std::size_t size() const { return concepts_.size(); }
    bool empty() const { return concepts_.empty(); }

    // Synonyms as loaded, before any expansion.
    const std::set<std::string>& base_synonyms(OmopId id) const;

    bool operator==(const ConceptStore& other) const {
        return concepts_ == other.concepts_ && relationships_ == other.relationships_ &&
               base_synonyms_ == other.base_synonyms_;
    }

private:
    friend ConceptStore expand_synonyms(const ConceptStore&, const SynonymExpansionConfig&);

    void reindex();

    std::vector<Concept> concepts_;  // ascending omop_id
    std::vector<ConceptRelationship> relationships_;
    std::map<OmopId, std::set<std::string>> base_synonyms_;
    std::unordered_map<OmopId, std::size_t> by_id_;
    std::map<std::pair<std::string, std::string>, std::size_t, std::less<>> by_code_;
    std::unordered_map<std::string, std::vector<OmopId>> by_surface_;
};

// Reads the three CSV exports (see docs/formats.md). Duplicate (vocabulary,
// code) or omop_id rows raise DuplicateConcept; references to unknown ids
// raise DanglingReference; unparsable rows raise MalformedRow.
ConceptStore load_vocabulary(const std::string& concept_file, const std::string& synonym_file,
                             const std::string& relationship_file);

// Merges synonyms across equivalence relations (single hop, source gains the
// target's surface forms) and registers code<->name equivalence for
// flat-hierarchy vocabularies. Recomputed from loaded synonyms each time,
// hence idempotent.
ConceptStore expand_synonyms(const ConceptStore& store, const SynonymExpansionConfig& config = {});

}  // namespace cdemap
