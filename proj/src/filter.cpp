#include "cdemap/filter.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

LinkingRules LinkingRules::defaults() {
    LinkingRules r;
    r.routes = {
        {"Condition", {"SNOMED"}},
        {"Drug", {"RxNorm", "ATC"}},
        {"Measurement", {"LOINC", "SNOMED"}},
        {"Unit", {"UCUM"}},
    };
    r.context_rules = {{"history of", "past-condition"}};
    return r;
}

LinkingRules LinkingRules::from_json(const nlohmann::json& j) {
    LinkingRules r;
    try {
        r.version = j.value("version", 1);
        for (const auto& route : j.at("routes")) {
            std::string domain = route.at("domain").get<std::string>();
            if (text::trim(domain).empty()) throw InvalidConfig("route with empty domain");
            r.routes[domain] = route.at("vocabularies").get<std::vector<std::string>>();
        }
        if (j.contains("context_rules"))
            for (const auto& rule : j.at("context_rules"))
                r.context_rules.push_back({rule.at("pattern").get<std::string>(), rule.at("directive").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("linking rules: ") + e.what());
    }
    for (const auto& c : r.context_rules)
        if (text::trim(c.pattern).empty()) throw InvalidConfig("linking rules: empty context pattern");
    return r;
}

LinkingRules LinkingRules::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
}

nlohmann::ordered_json LinkingRules::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["routes"] = nlohmann::ordered_json::array();
    for (const auto& [domain, vocabs] : routes) j["routes"].push_back({{"domain", domain}, {"vocabularies", vocabs}});
    j["context_rules"] = nlohmann::ordered_json::array();
    for (const auto& c : context_rules) j["context_rules"].push_back({{"pattern", c.pattern}, {"directive", c.directive}});
    return j;
}

void LinkingRules::validate(const ConceptStore& store) const {
    auto vocabs = store.vocabularies();
    for (const auto& [domain, allowed] : routes)
        for (const auto& v : allowed)
            if (!vocabs.count(v))
                throw InvalidConfig("route for domain '" + domain + "' names vocabulary '" + v + "' absent from the store");
    for (const auto& c : context_rules)
        if (text::trim(c.pattern).empty()) throw InvalidConfig("empty context rule pattern");
}

const std::vector<std::string>* LinkingRules::route_for(std::string_view domain) const {
    std::string key = text::normalize_surface(domain);
    for (const auto& [d, vocabs] : routes)
        if (text::normalize_surface(d) == key) return &vocabs;
    return nullptr;
}

std::string LinkingRules::describe() const {
    std::string out;
    for (const auto& [domain, vocabs] : routes)
        out += "- Link " + domain + " terms to " + text::join(vocabs, ", then ") + ".\n";
    for (const auto& c : context_rules)
        out += "- When the entry mentions \"" + c.pattern + "\", prefer concepts marked " + c.directive + ".\n";
    return out;
}

void FilterConfig::validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidConfig("filter tau must lie in [0, 1]");
}

std::vector<FilteredCandidate> attach_vocabulary(const std::vector<Candidate>& candidates, const ConceptStore& store) {
    std::vector<FilteredCandidate> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back({c, store.get_concept(c.omop_id).vocabulary, {}, std::nullopt});
    return out;
}

std::vector<std::string> matching_directives(std::string_view query_text, const LinkingRules& rules) {
    std::vector<std::string> out;
    std::string q = text::normalize_surface(query_text);
    for (const auto& rule : rules.context_rules)
        if (text::contains(q, text::normalize_surface(rule.pattern)) &&
            std::find(out.begin(), out.end(), rule.directive) == out.end())
            out.push_back(rule.directive);
    return out;
}

std::vector<FilteredCandidate> apply_linking_rules(const std::vector<FilteredCandidate>& candidates,
                                                   std::string_view query_text,
                                                   const std::optional<std::string>& domain_hint,
                                                   const LinkingRules& rules) {
    const std::vector<std::string>* route = nullptr;
    if (domain_hint) {
        route = rules.route_for(*domain_hint);
        if (!route) spdlog::warn("linking rules: domain '{}' has no route, passing candidates through", *domain_hint);
    }
    auto directives = matching_directives(query_text, rules);
    std::vector<FilteredCandidate> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        if (route && std::find(route->begin(), route->end(), c.vocabulary) == route->end()) {
            spdlog::debug("linking rules: drop omop_id={} vocabulary={} (domain {})", c.candidate.omop_id,
                          c.vocabulary, *domain_hint);
            continue;
        }
        FilteredCandidate kept = c;
        for (const auto& d : directives)
            if (std::find(kept.directives.begin(), kept.directives.end(), d) == kept.directives.end())
                kept.directives.push_back(d);
        out.push_back(std::move(kept));
    }
    return out;
}

std::vector<FilteredCandidate> filter_by_similarity(const std::vector<FilteredCandidate>& candidates,
                                                    std::string_view query_text, EmbeddingProvider& provider,
                                                    double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidConfig("filter tau must lie in [0, 1]");
    std::vector<FilteredCandidate> out;
    if (candidates.empty()) return out;
    DenseVector q = provider.embed_dense(query_text);
    for (const auto& c : candidates) {
        double sim = cosine(provider.embed_dense(c.candidate.matched_surface), q);
        if (sim < tau) {
            spdlog::debug("similarity filter: drop omop_id={} sim={:.4f} < tau={:.4f}", c.candidate.omop_id, sim, tau);
            continue;
        }
        FilteredCandidate kept = c;
        kept.similarity = sim;
        out.push_back(std::move(kept));
    }
    return out;
}

}  // namespace cdemap
