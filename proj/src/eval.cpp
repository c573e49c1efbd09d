#include "cdemap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <unicode/unistr.h>

#include "cdemap/csv.hpp"
#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

using nlohmann::json;

namespace {

std::vector<GoldMapping> gold_from_rows(const std::vector<csv::Row>& rows, const std::string& where) {
    if (rows.empty()) throw MalformedRow(where + ": missing header");
    const auto& header = rows.front().fields;
    if (header != std::vector<std::string>{"label", "component", "gold_omop_ids"})
        throw MalformedRow(where + ": expected header label,component,gold_omop_ids");
    std::vector<GoldMapping> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        std::string at = where + " line " + std::to_string(row.line);
        if (row.fields.size() != 3) throw MalformedRow(at + ": expected 3 fields");
        GoldMapping g{text::squash_whitespace(row.fields[0]), text::trim(row.fields[1]), {}};
        for (const auto& part : text::split(row.fields[2], '|')) {
            std::string id = text::trim(part);
            if (id.empty()) continue;
            try {
                std::size_t used = 0;
                long long v = std::stoll(id, &used);
                if (used != id.size()) throw std::invalid_argument(id);
                g.gold_omop_ids.insert(v);
            } catch (const std::exception&) {
                throw MalformedRow(at + ": bad omop id '" + id + "'");
            }
        }
        if (g.gold_omop_ids.empty()) throw MalformedRow(at + ": empty gold id set");
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<csv::Row> parse_rows(std::string body) {
    if (body.rfind("\xEF\xBB\xBF", 0) == 0) body.erase(0, 3);
    std::istringstream in(body);
    return csv::read_all(in);
}

std::string result_key(std::string_view label, std::string_view component) {
    return text::normalize_surface(label) + '\x1f' + std::string(component);
}

std::map<std::string, const RankedResult*> index_results(const std::vector<RankedResult>& results) {
    std::map<std::string, const RankedResult*> idx;
    for (const auto& r : results) idx.emplace(result_key(r.label, r.component), &r);
    return idx;
}

const std::vector<OmopId>& ranking_for(const std::map<std::string, const RankedResult*>& idx, const GoldMapping& g) {
    static const std::vector<OmopId> empty;
    auto it = idx.find(result_key(g.label, g.component));
    return it == idx.end() ? empty : it->second->ranking;
}

void check_k(std::size_t k) {
    if (k < 1) throw OutOfRange("k must be >= 1");
}

std::u32string code_points(std::string_view s) {
    std::string norm = text::normalize_surface(s);
    auto us = icu::UnicodeString::fromUTF8(icu::StringPiece(norm.data(), static_cast<int32_t>(norm.size())));
    std::u32string out;
    for (int32_t i = 0; i < us.length();) {
        UChar32 c = us.char32At(i);
        out.push_back(static_cast<char32_t>(c));
        i += U16_LENGTH(c);
    }
    return out;
}

}  // namespace

std::vector<GoldMapping> parse_gold(const std::string& csv_text) {
    return gold_from_rows(parse_rows(csv_text), "gold");
}

std::vector<GoldMapping> load_gold(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return gold_from_rows(parse_rows(ss.str()), path);
}

std::vector<RankedResult> rankings_from_json(const json& results) {
    std::vector<RankedResult> out;
    if (!results.is_array()) throw BadPayload("results must be a JSON array");
    for (const auto& rec : results) {
        std::string label = rec.at("label").get<std::string>();
        if (!rec.contains("trace") || !rec.at("trace").contains("rankings"))
            throw MissingRanking("result for '" + label + "' has no ranking; rerun map with --trace");
        for (const auto& [component, ids] : rec.at("trace").at("rankings").items())
            out.push_back({label, component, ids.get<std::vector<OmopId>>()});
    }
    return out;
}

std::vector<RankedResult> rankings_from_results(const std::vector<MappingResult>& results) {
    std::vector<RankedResult> out;
    for (const auto& r : results)
        for (const auto& c : r.component_results) out.push_back({r.entry.label, c.query.key, c.ranking});
    return out;
}

std::vector<RankedResult> load_rankings(const std::string& results_path) {
    std::ifstream in(results_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + results_path);
    try {
        return rankings_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw BadPayload(results_path + ": " + e.what());
    }
}

double acc_at_k(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold, std::size_t k) {
    check_k(k);
    if (gold.empty()) return 0.0;
    auto idx = index_results(results);
    std::size_t hits = 0;
    for (const auto& g : gold) {
        const auto& ranking = ranking_for(idx, g);
        std::size_t n = std::min(k, ranking.size());
        bool all = std::all_of(g.gold_omop_ids.begin(), g.gold_omop_ids.end(), [&](OmopId id) {
            return std::find(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(n), id) !=
                   ranking.begin() + static_cast<std::ptrdiff_t>(n);
        });
        if (all) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double ndcg_binary(const std::vector<OmopId>& ranking, const std::set<OmopId>& relevant, std::size_t k) {
    check_k(k);
    if (relevant.empty()) return 0.0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
        if (relevant.count(ranking[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

double ncgd_at_k(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold, std::size_t k) {
    check_k(k);
    if (gold.empty()) return 0.0;
    auto idx = index_results(results);
    double sum = 0.0;
    for (const auto& g : gold) sum += ndcg_binary(ranking_for(idx, g), g.gold_omop_ids, k);
    return sum / static_cast<double>(gold.size());
}

std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double edit_similarity(std::string_view a, std::string_view b) {
    auto ca = code_points(a), cb = code_points(b);
    std::size_t longest = std::max(ca.size(), cb.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(ca, cb)) / static_cast<double>(longest);
}

PRF make_prf(std::size_t true_positive, std::size_t predicted, std::size_t gold) {
    PRF p;
    p.precision = predicted ? static_cast<double>(true_positive) / static_cast<double>(predicted) : 0.0;
    p.recall = gold ? static_cast<double>(true_positive) / static_cast<double>(gold) : 0.0;
    p.f1 = (p.precision + p.recall) > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
    return p;
}

namespace {

std::map<std::string, std::vector<std::string>> field_values(const DecomposedQuery& q) {
    std::map<std::string, std::vector<std::string>> f;
    if (!text::trim(q.base_entity).empty()) f["base_entity"] = {q.base_entity};
    if (!q.associated_entities.empty()) f["associated_entities"] = q.associated_entities;
    if (!q.categories.empty()) f["categories"] = q.categories;
    if (q.unit) f["unit"] = {*q.unit};
    if (q.visit) f["visit"] = {*q.visit};
    if (q.method) f["method"] = {*q.method};
    if (q.formula) f["formula"] = {*q.formula};
    return f;
}

// Greedy one-to-one: each predicted value takes the most similar unused gold
// value at or above the threshold (first on ties).
std::size_t fuzzy_matches(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
    std::vector<bool> used(gold.size(), false);
    std::size_t tp = 0;
    for (const auto& p : predicted) {
        double best = -1.0;
        std::size_t best_j = gold.size();
        for (std::size_t j = 0; j < gold.size(); ++j) {
            if (used[j]) continue;
            double s = edit_similarity(p, gold[j]);
            if (s >= kFuzzyMatchThreshold && s > best) {
                best = s;
                best_j = j;
            }
        }
        if (best_j < gold.size()) {
            used[best_j] = true;
            ++tp;
        }
    }
    return tp;
}

}  // namespace

std::set<std::string> present_attributes(const DecomposedQuery& q) {
    std::set<std::string> out;
    for (const auto& [k, v] : field_values(q)) out.insert(k);
    return out;
}

DecompositionScores decomposition_scores(const std::vector<DecomposedQuery>& predicted,
                                         const std::vector<DecomposedQuery>& gold) {
    if (predicted.size() != gold.size())
        throw LengthMismatch("predicted has " + std::to_string(predicted.size()) + " items, gold has " +
                             std::to_string(gold.size()));
    std::size_t attr_tp = 0, attr_pred = 0, attr_gold = 0;
    std::size_t val_tp = 0, val_pred = 0, val_gold = 0;
    std::size_t base_ok = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        auto pf = field_values(predicted[i]);
        auto gf = field_values(gold[i]);
        attr_pred += pf.size();
        attr_gold += gf.size();
        for (const auto& [field, values] : pf) {
            val_pred += values.size();
            auto g = gf.find(field);
            if (g == gf.end()) continue;
            ++attr_tp;
            val_tp += fuzzy_matches(values, g->second);
        }
        for (const auto& [field, values] : gf) val_gold += values.size();
        // The base entity counts when it sits in the base field and matches.
        auto pb = pf.find("base_entity"), gb = gf.find("base_entity");
        if (pb != pf.end() && gb != gf.end() &&
            edit_similarity(pb->second.front(), gb->second.front()) >= kFuzzyMatchThreshold)
            ++base_ok;
    }
    DecompositionScores s;
    s.attribute = make_prf(attr_tp, attr_pred, attr_gold);
    s.value = make_prf(val_tp, val_pred, val_gold);
    s.base_entity_accuracy = gold.empty() ? 0.0 : static_cast<double>(base_ok) / static_cast<double>(gold.size());
    return s;
}

EvalReport evaluate(const std::vector<RankedResult>& results, const std::vector<GoldMapping>& gold,
                    const std::vector<std::size_t>& ks) {
    EvalReport r;
    r.ks = ks;
    r.gold_rows = gold.size();
    for (std::size_t k : ks) {
        r.acc.push_back(acc_at_k(results, gold, k));
        r.ncgd.push_back(ncgd_at_k(results, gold, k));
    }
    return r;
}

std::string EvalReport::to_text() const {
    std::string out = fmt::format("gold rows: {}\n\nacc@k\n", gold_rows);
    for (std::size_t i = 0; i < ks.size(); ++i) out += fmt::format("  k={:<4} {:.4f}\n", ks[i], acc[i]);
    out += "\nNCGD@k (binary-relevance NDCG)\n";
    for (std::size_t i = 0; i < ks.size(); ++i) out += fmt::format("  k={:<4} {:.4f}\n", ks[i], ncgd[i]);
    return out;
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        arr.push_back({{"metric", "acc"}, {"k", ks[i]}, {"value", acc[i]}});
        arr.push_back({{"metric", "ncgd"}, {"k", ks[i]}, {"value", ncgd[i]}});
    }
    nlohmann::ordered_json o;
    o["gold_rows"] = gold_rows;
    o["records"] = std::move(arr);
    return o;
}

}  // namespace cdemap
