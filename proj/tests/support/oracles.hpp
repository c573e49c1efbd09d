#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They restate the definitions directly and share no code with the
// library beyond the embedding provider's raw vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cdemap/embedding.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap::oracle {

struct Surface {
    OmopId omop_id;
    std::string text;
};

struct Hit {
    OmopId omop_id;
    double score;
};

inline double plain_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return 0.0;
    long double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return static_cast<double>(d / (std::sqrt(na) * std::sqrt(nb)));
}

inline double plain_dot(const SparseVector& a, const SparseVector& b) {
    std::map<std::uint32_t, double> m;
    for (auto [t, w] : a.entries) m[t] += w;
    long double s = 0;
    for (auto [t, w] : b.entries)
        if (auto it = m.find(t); it != m.end()) s += static_cast<long double>(it->second) * w;
    return static_cast<double>(s);
}

// Scores equal at twelve decimals are ties.
inline double at_resolution(double s) { return std::round(s * 1e12) / 1e12; }

// Best score per concept, sorted by score desc then id asc, cut at k.
inline std::vector<Hit> top_k(const std::vector<Surface>& surfaces, const std::vector<double>& scores, std::size_t k,
                              bool drop_nonpositive) {
    std::map<OmopId, double> best;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        if (drop_nonpositive && !(scores[i] > 0.0)) continue;
        auto [it, fresh] = best.emplace(surfaces[i].omop_id, scores[i]);
        if (!fresh) it->second = std::max(it->second, scores[i]);
    }
    std::vector<Hit> hits;
    for (auto [id, s] : best) hits.push_back({id, s});
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.omop_id < b.omop_id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

inline std::vector<Hit> dense_search(EmbeddingProvider& p, const std::vector<Surface>& surfaces,
                                     const std::string& query, std::size_t k) {
    auto q = p.embed_dense(query).values;
    std::vector<double> scores;
    for (const auto& s : surfaces) scores.push_back(at_resolution(plain_cosine(q, p.embed_dense(s.text).values)));
    return top_k(surfaces, scores, k, false);
}

inline std::vector<Hit> sparse_search(EmbeddingProvider& p, const std::vector<Surface>& surfaces,
                                      const std::string& query, std::size_t k) {
    auto q = p.embed_sparse(query);
    std::vector<double> scores;
    for (const auto& s : surfaces) scores.push_back(at_resolution(plain_dot(q, p.embed_sparse(s.text))));
    return top_k(surfaces, scores, k, true);
}

// Reciprocal-rank fusion with offset 60.
inline std::vector<Hit> fuse(const std::vector<Hit>& dense, const std::vector<Hit>& sparse) {
    std::map<OmopId, double> fused;
    for (std::size_t r = 0; r < dense.size(); ++r) fused[dense[r].omop_id] += 1.0 / (60.0 + double(r + 1));
    for (std::size_t r = 0; r < sparse.size(); ++r) fused[sparse[r].omop_id] += 1.0 / (60.0 + double(r + 1));
    std::vector<Hit> out;
    for (auto [id, s] : fused) out.push_back({id, s});
    std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.omop_id < b.omop_id;
    });
    return out;
}

// Random vocabulary of clinical-looking surface forms: `surfaces` strings
// spread over roughly surfaces/2 concepts, none with parents or semantic
// types, so the embedded text equals the surface.
struct RandomVocabulary {
    ConceptStore store;
    std::vector<Surface> surfaces;
    std::vector<std::string> words;
};

inline RandomVocabulary random_vocabulary(std::mt19937_64& rng, std::size_t surfaces) {
    static const std::vector<std::string> words{
        "acute", "chronic", "heart", "renal", "failure", "pain", "chest", "blood", "pressure", "glucose",
        "serum", "plasma", "level", "index", "mass", "body", "tumor", "lung", "liver", "kidney",
        "infarction", "myocardial", "systolic", "diastolic", "rate", "count", "cell", "white", "red", "platelet",
        "dose", "daily", "oral", "tablet", "history", "family", "smoking", "status", "score", "total"};
    RandomVocabulary v;
    v.words = words;
    ConceptStore::Builder b;
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    std::uniform_int_distribution<int> len(1, 4);
    std::map<std::string, bool> used;
    auto phrase = [&] {
        for (;;) {
            std::string s;
            int n = len(rng);
            for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[pick(rng)];
            if (!used[s]) {
                used[s] = true;
                return s;
            }
        }
    };
    OmopId id = 1000;
    std::size_t made = 0;
    std::uniform_int_distribution<int> syn_count(0, 2);
    while (made < surfaces) {
        Concept c;
        c.omop_id = id++;
        c.code = "R" + std::to_string(c.omop_id);
        c.name = phrase();
        c.vocabulary = "RAND";
        c.domain = "Condition";
        c.is_standard = true;
        b.add_concept(c);
        v.surfaces.push_back({c.omop_id, c.name});
        ++made;
        for (int s = syn_count(rng); s > 0 && made < surfaces; --s, ++made) {
            std::string syn = phrase();
            b.add_synonym(c.omop_id, syn);
            v.surfaces.push_back({c.omop_id, syn});
        }
    }
    v.store = b.build();
    return v;
}

// Selection rule restated over integers: with n rounds, candidate i has
// votes_i = #{j : s_ij >= t}; it qualifies when votes_i / n > tau_rel;
// among qualifiers the winner has the most votes, then the largest score
// sum, then the smallest id. Returns the winning index or nullopt.
inline std::optional<std::size_t> select_top(const std::vector<std::vector<int>>& scores,
                                             const std::vector<OmopId>& ids, int t, double tau_rel) {
    std::optional<std::size_t> best;
    long best_votes = -1, best_sum = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        long votes = 0, sum = 0;
        for (int s : scores[i]) {
            votes += s >= t;
            sum += s;
        }
        long n = static_cast<long>(scores[i].size());
        if (!(static_cast<double>(votes) > tau_rel * static_cast<double>(n))) continue;
        bool better = !best || votes > best_votes || (votes == best_votes && sum > best_sum) ||
                      (votes == best_votes && sum == best_sum && ids[i] < ids[*best]);
        if (better) {
            best = i;
            best_votes = votes;
            best_sum = sum;
        }
    }
    return best;
}

// NDCG@k with binary relevance written out term by term.
inline double ndcg(const std::vector<OmopId>& ranking, const std::vector<OmopId>& relevant, std::size_t k) {
    auto rel = [&](OmopId id) { return std::find(relevant.begin(), relevant.end(), id) != relevant.end(); };
    double dcg = 0, idcg = 0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
        if (rel(ranking[i])) dcg += 1.0 / std::log2(double(i) + 2.0);
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) idcg += 1.0 / std::log2(double(i) + 2.0);
    return idcg == 0 ? 0.0 : dcg / idcg;
}

// Textbook dynamic-programming edit distance over code points.
inline std::size_t edit_distance(const std::u32string& a, const std::u32string& b) {
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i)
        for (std::size_t j = 1; j <= b.size(); ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    return d[a.size()][b.size()];
}

}  // namespace cdemap::oracle
