#include "cdemap/reranker.hpp"

#include <algorithm>
#include <regex>

#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"

namespace cdemap {

std::string_view category_name(RelevanceCategory c) {
    switch (c) {
        case RelevanceCategory::not_relevant: return "not_relevant";
        case RelevanceCategory::partially_relevant: return "partially_relevant";
        case RelevanceCategory::highly_relevant: return "highly_relevant";
        case RelevanceCategory::exact_match: return "exact_match";
    }
    return "not_relevant";
}

RelevanceCategory classify(int score) {
    if (score < 1 || score > 10) throw OutOfRange("relevance score " + std::to_string(score) + " outside 1..10");
    if (score <= 4) return RelevanceCategory::not_relevant;
    if (score <= 7) return RelevanceCategory::partially_relevant;
    if (score <= 9) return RelevanceCategory::highly_relevant;
    return RelevanceCategory::exact_match;
}

void RerankConfig::validate() const {
    if (n < 1) throw InvalidConfig("rerank n must be >= 1");
    if (t < 1 || t > 10) throw InvalidConfig("rerank t must lie in 1..10");
    if (!(tau_rel > 0.0 && tau_rel <= 1.0)) throw InvalidConfig("rerank tau_rel must lie in (0, 1]");
}

std::vector<RerankItem> rerank_items(const std::vector<FilteredCandidate>& candidates, const ConceptStore& store) {
    std::vector<RerankItem> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        const Concept& cpt = store.get_concept(c.candidate.omop_id);
        out.push_back({cpt.omop_id, cpt.name, cpt.vocabulary, cpt.semantic_type});
    }
    return out;
}

std::string build_rerank_prompt(std::string_view query_text, const std::vector<RerankItem>& candidates,
                                const std::vector<std::string>& directives) {
    std::string p =
        "### Task\n"
        "Rate how relevant each candidate concept is to the query on a scale from 1 (lowest) to 10 (highest). "
        "Then classify each candidate by its score: 1-4 not relevant, 5-7 partially relevant, "
        "8-9 highly relevant, 10 exact match.\n";
    for (const auto& d : directives) p += "Directive: " + d + "\n";
    p += "Answer with one entry per candidate in the form <number>:<score>, for example \"1:10 2:7\".\n";
    p += "\n### Candidates\n";
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        p += std::to_string(i + 1) + ". " + c.name + " (vocabulary: " + c.vocabulary;
        if (!c.semantic_type.empty()) p += "; semantic type: " + c.semantic_type;
        p += ")\n";
    }
    p += "\n### Query\n";
    p.append(query_text);
    p += "\n";
    return p;
}

std::vector<int> parse_scores(std::string_view completion, std::size_t count, std::vector<std::size_t>& invalid) {
    static const std::regex pair_re(R"((\d+)\s*[:=]\s*(-?\d+))");
    std::vector<int> scores(count, 0);
    std::vector<bool> seen(count, false);
    std::string s(completion);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pair_re); it != std::sregex_iterator(); ++it) {
        long idx = 0, score = 0;
        try {
            idx = std::stol((*it)[1].str());
            score = std::stol((*it)[2].str());
        } catch (const std::exception&) {
            continue;
        }
        if (idx < 1 || static_cast<std::size_t>(idx) > count) continue;
        auto i = static_cast<std::size_t>(idx - 1);
        if (seen[i]) continue;
        seen[i] = true;
        scores[i] = (score >= 1 && score <= 10) ? static_cast<int>(score) : 0;
    }
    invalid.clear();
    for (std::size_t i = 0; i < count; ++i)
        if (scores[i] == 0) invalid.push_back(i);
    return scores;
}

RoundScores score_round(std::string_view query_text, const std::vector<RerankItem>& candidates,
                        const std::vector<std::string>& directives, LLMProvider& provider, std::uint64_t seed) {
    RoundScores round;
    if (candidates.empty()) return round;
    const std::string prompt = build_rerank_prompt(query_text, candidates, directives);
    std::vector<std::size_t> invalid;
    ++round.provider_calls;
    round.scores = parse_scores(provider.complete(prompt, 0.0, seed), candidates.size(), invalid);
    if (!invalid.empty()) {
        round.reprompted = true;
        std::string reprompt = prompt + "\nYour previous answer did not give a score from 1 to 10 for every candidate. "
                                        "Answer again with exactly one <number>:<score> entry for each of the " +
                               std::to_string(candidates.size()) + " candidates.\n";
        ++round.provider_calls;
        std::vector<std::size_t> still_invalid;
        auto retry = parse_scores(provider.complete(reprompt, 0.0, seed), candidates.size(), still_invalid);
        for (std::size_t i : invalid) {
            if (retry[i] != 0) {
                round.scores[i] = retry[i];
            } else {
                round.scores[i] = 1;
                round.defaulted.push_back(i);
                spdlog::warn("rerank: no valid score for candidate {} ({}) after reprompt; using 1", i + 1,
                             candidates[i].omop_id);
            }
        }
    }
    return round;
}

double ScoredCandidate::mean_score() const {
    if (relevance_scores.empty()) return 0.0;
    double s = 0.0;
    for (int v : relevance_scores) s += v;
    return s / static_cast<double>(relevance_scores.size());
}

ScoredCandidate score_candidate(const Candidate& candidate, const std::vector<int>& round_scores, int t) {
    ScoredCandidate sc;
    sc.candidate = candidate;
    sc.relevance_scores = round_scores;
    int votes = 0;
    for (int s : round_scores) {
        sc.categories.push_back(classify(s));
        int b = s >= t ? 1 : 0;
        sc.binary_votes.push_back(b);
        votes += b;
    }
    sc.confidence = round_scores.empty() ? 0.0 : static_cast<double>(votes) / static_cast<double>(round_scores.size());
    return sc;
}

SelfConsistencyResult self_consistency(std::string_view query_text, const std::vector<FilteredCandidate>& candidates,
                                       const ConceptStore& store, LLMProvider& provider, const RerankConfig& config) {
    config.validate();
    SelfConsistencyResult result;
    if (candidates.empty()) return result;
    auto items = rerank_items(candidates, store);
    std::vector<std::string> directives;
    for (const auto& c : candidates)
        for (const auto& d : c.directives)
            if (std::find(directives.begin(), directives.end(), d) == directives.end()) directives.push_back(d);

    std::vector<std::vector<int>> per_candidate(candidates.size());
    std::string last_failure;
    for (int j = 0; j < config.n; ++j) {
        std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(j);
        std::optional<RoundScores> round;
        for (int attempt = 0; attempt < 2 && !round; ++attempt) {
            try {
                round = score_round(query_text, items, directives, provider, seed);
            } catch (const ProviderFailure& e) {
                ++result.provider_calls;
                last_failure = e.what();
                spdlog::warn("rerank round {} attempt {} failed: {}", j + 1, attempt + 1, e.what());
            }
        }
        if (!round) {
            ++result.failed_rounds;
            for (auto& s : per_candidate) s.push_back(1);
            continue;
        }
        result.provider_calls += round->provider_calls;
        for (std::size_t i = 0; i < candidates.size(); ++i) per_candidate[i].push_back(round->scores[i]);
    }
    if (result.failed_rounds == config.n) throw ProviderFailure("every rerank round failed: " + last_failure);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        result.scored.push_back(score_candidate(candidates[i].candidate, per_candidate[i], config.t));
    return result;
}

namespace {

bool decision_less(const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    double ma = a.mean_score(), mb = b.mean_score();
    if (ma != mb) return ma > mb;
    return a.candidate.omop_id < b.candidate.omop_id;
}

}  // namespace

std::vector<ScoredCandidate> decision_order(std::vector<ScoredCandidate> scored) {
    std::stable_sort(scored.begin(), scored.end(), decision_less);
    return scored;
}

MatchDecision select_top(const std::vector<ScoredCandidate>& scored, const RerankConfig& config) {
    MatchDecision decision;
    for (const auto& s : scored) {
        if (!(s.confidence > config.tau_rel)) continue;
        if (!decision.selected || decision_less(s, *decision.selected)) decision.selected = s;
    }
    return decision;
}

}  // namespace cdemap
