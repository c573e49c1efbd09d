#include "cdemap/vocab_store.hpp"

#include <algorithm>
#include <charconv>
#include <tuple>

#include "cdemap/csv.hpp"
#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

namespace {

std::string at(const std::string& where) { return where.empty() ? std::string("input") : where; }

OmopId parse_id(const std::string& s, const std::string& where, std::string_view column) {
    std::string t = text::trim(s);
    OmopId v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size())
        throw MalformedRow(where + ": " + std::string(column) + " is not an integer: '" + s + "'");
    return v;
}

bool parse_standard(const std::string& s, const std::string& where) {
    std::string t = text::normalize_surface(s);
    if (t == "1" || t == "true" || t == "s" || t == "y" || t == "yes") return true;
    if (t.empty() || t == "0" || t == "false" || t == "c" || t == "n" || t == "no") return false;
    throw MalformedRow(where + ": is_standard not recognized: '" + s + "'");
}

}  // namespace

ConceptStore::Builder& ConceptStore::Builder::add_concept(Concept cpt, const std::string& where) {
    if (text::trim(cpt.name).empty()) throw MalformedRow(at(where) + ": empty concept name");
    if (text::trim(cpt.vocabulary).empty()) throw MalformedRow(at(where) + ": empty vocabulary");
    if (auto it = id_where_.find(cpt.omop_id); it != id_where_.end())
        throw DuplicateConcept(at(where) + ": omop_id " + std::to_string(cpt.omop_id) +
                               " already defined at " + it->second);
    auto key = std::make_pair(cpt.vocabulary, cpt.code);
    if (auto it = code_where_.find(key); it != code_where_.end())
        throw DuplicateConcept(at(where) + ": (" + cpt.vocabulary + ", \"" + cpt.code +
                               "\") already defined at " + it->second);
    id_where_.emplace(cpt.omop_id, at(where));
    code_where_.emplace(std::move(key), at(where));
    concepts_.push_back(std::move(cpt));
    return *this;
}

ConceptStore::Builder& ConceptStore::Builder::add_synonym(OmopId id, std::string_view synonym,
                                                          const std::string& where) {
    synonyms_.push_back({{id, std::string(synonym)}, at(where)});
    return *this;
}

ConceptStore::Builder& ConceptStore::Builder::add_relationship(ConceptRelationship rel,
                                                               const std::string& where) {
    if (text::trim(rel.relation).empty()) throw MalformedRow(at(where) + ": empty relation");
    relationships_.push_back({std::move(rel), at(where)});
    return *this;
}

ConceptStore ConceptStore::Builder::build() {
    ConceptStore store;
    store.concepts_ = std::move(concepts_);
    std::sort(store.concepts_.begin(), store.concepts_.end(),
              [](const Concept& a, const Concept& b) { return a.omop_id < b.omop_id; });
    for (std::size_t i = 0; i < store.concepts_.size(); ++i) {
        auto& c = store.concepts_[i];
        store.by_id_.emplace(c.omop_id, i);
        // Incoming synonym sets are re-keyed so the invariant holds whatever
        // the caller passed in.
        std::set<std::string> keyed;
        for (const auto& s : c.synonyms) keyed.insert(text::normalize_surface(s));
        c.synonyms = std::move(keyed);
    }

    for (auto& [syn, where] : synonyms_) {
        auto it = store.by_id_.find(syn.first);
        if (it == store.by_id_.end())
            throw DanglingReference(where + ": synonym refers to unknown omop_id " + std::to_string(syn.first));
        std::string key = text::normalize_surface(syn.second);
        if (!key.empty()) store.concepts_[it->second].synonyms.insert(std::move(key));
    }

    for (auto& [rel, where] : relationships_) {
        for (OmopId end : {rel.source_omop_id, rel.target_omop_id})
            if (!store.by_id_.count(end))
                throw DanglingReference(where + ": relationship refers to unknown omop_id " + std::to_string(end));
        if (rel.relation == kIsARelation) store.concepts_[store.by_id_[rel.source_omop_id]].parents.insert(rel.target_omop_id);
        store.relationships_.push_back(std::move(rel));
    }
    std::sort(store.relationships_.begin(), store.relationships_.end(),
              [](const ConceptRelationship& a, const ConceptRelationship& b) {
                  return std::tie(a.source_omop_id, a.target_omop_id, a.relation) <
                         std::tie(b.source_omop_id, b.target_omop_id, b.relation);
              });
    store.relationships_.erase(std::unique(store.relationships_.begin(), store.relationships_.end()),
                               store.relationships_.end());

    for (auto& c : store.concepts_) {
        for (OmopId p : c.parents)
            if (!store.by_id_.count(p))
                throw DanglingReference("concept " + std::to_string(c.omop_id) + ": unknown parent " + std::to_string(p));
        c.synonyms.erase(text::normalize_surface(c.name));
        store.base_synonyms_[c.omop_id] = c.synonyms;
    }
    store.reindex();
    return store;
}

void ConceptStore::reindex() {
    by_id_.clear();
    by_code_.clear();
    by_surface_.clear();
    for (std::size_t i = 0; i < concepts_.size(); ++i) {
        const auto& c = concepts_[i];
        by_id_.emplace(c.omop_id, i);
        by_code_.emplace(std::make_pair(c.vocabulary, c.code), i);
        by_surface_[text::normalize_surface(c.name)].push_back(c.omop_id);
        for (const auto& s : c.synonyms) by_surface_[s].push_back(c.omop_id);
    }
    // Concepts are visited in id order, so each posting list is sorted; a
    // concept can still appear twice only if name and synonym collide, which
    // the invariant rules out.
}

const Concept& ConceptStore::get_concept(OmopId id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw NotFound("no concept with omop_id " + std::to_string(id));
    return concepts_[it->second];
}

const Concept* ConceptStore::find(OmopId id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &concepts_[it->second];
}

const Concept& ConceptStore::lookup_by_code(std::string_view vocabulary, std::string_view code) const {
    auto it = by_code_.find(std::make_pair(std::string(vocabulary), std::string(code)));
    if (it == by_code_.end())
        throw NotFound("no concept (" + std::string(vocabulary) + ", \"" + std::string(code) + "\")");
    return concepts_[it->second];
}

std::vector<const Concept*> ConceptStore::find_exact(std::string_view surface) const {
    std::vector<const Concept*> out;
    auto it = by_surface_.find(text::normalize_surface(surface));
    if (it == by_surface_.end()) return out;
    for (OmopId id : it->second) out.push_back(&concepts_[by_id_.at(id)]);
    return out;
}

std::vector<std::string> ConceptStore::surface_forms(const Concept& c) const {
    std::vector<std::string> out;
    out.reserve(c.synonyms.size() + 1);
    out.push_back(c.name);
    out.insert(out.end(), c.synonyms.begin(), c.synonyms.end());
    return out;
}

std::set<std::string> ConceptStore::vocabularies() const {
    std::set<std::string> out;
    for (const auto& c : concepts_) out.insert(c.vocabulary);
    return out;
}

const std::set<std::string>& ConceptStore::base_synonyms(OmopId id) const {
    static const std::set<std::string> empty;
    auto it = base_synonyms_.find(id);
    return it == base_synonyms_.end() ? empty : it->second;
}

ConceptStore load_vocabulary(const std::string& concept_file, const std::string& synonym_file,
                             const std::string& relationship_file) {
    ConceptStore::Builder builder;
    auto where = [](const std::string& file, std::size_t line) { return file + " line " + std::to_string(line); };

    for (const auto& row : csv::read_table(
             concept_file, {"omop_id", "code", "name", "vocabulary", "domain", "semantic_type", "is_standard"})) {
        const auto& f = row.fields;
        std::string w = where(concept_file, row.line);
        Concept c;
        c.omop_id = parse_id(f[0], w, "omop_id");
        c.code = f[1];
        c.name = text::squash_whitespace(f[2]);
        c.vocabulary = text::trim(f[3]);
        c.domain = text::trim(f[4]);
        c.semantic_type = text::trim(f[5]);
        c.is_standard = parse_standard(f[6], w);
        builder.add_concept(std::move(c), w);
    }
    for (const auto& row : csv::read_table(synonym_file, {"omop_id", "synonym"})) {
        std::string w = where(synonym_file, row.line);
        builder.add_synonym(parse_id(row.fields[0], w, "omop_id"), row.fields[1], w);
    }
    for (const auto& row :
         csv::read_table(relationship_file, {"source_omop_id", "target_omop_id", "relation"})) {
        std::string w = where(relationship_file, row.line);
        builder.add_relationship({parse_id(row.fields[0], w, "source_omop_id"),
                                  parse_id(row.fields[1], w, "target_omop_id"), text::trim(row.fields[2])},
                                 w);
    }
    return builder.build();
}

ConceptStore expand_synonyms(const ConceptStore& store, const SynonymExpansionConfig& config) {
    // Local surface set: loaded synonyms plus, for flat vocabularies, the code.
    auto local = [&](const Concept& c) {
        std::set<std::string> s = store.base_synonyms(c.omop_id);
        if (config.flat_vocabularies.count(c.vocabulary)) {
            std::string code = text::normalize_surface(c.code);
            if (!code.empty()) s.insert(code);
        }
        return s;
    };

    ConceptStore out = store;
    for (auto& c : out.concepts_) c.synonyms = local(c);
    for (const auto& rel : store.relationships_) {
        if (!config.merge_relations.count(rel.relation)) continue;
        const Concept& target = store.get_concept(rel.target_omop_id);
        Concept& source = out.concepts_[out.by_id_.at(rel.source_omop_id)];
        source.synonyms.insert(text::normalize_surface(target.name));
        auto ts = local(target);
        source.synonyms.insert(ts.begin(), ts.end());
    }
    for (auto& c : out.concepts_) {
        c.synonyms.erase(text::normalize_surface(c.name));
        c.synonyms.erase(std::string());
    }
    out.reindex();
    return out;
}

}  // namespace cdemap
