// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Each check returns a short detail string on success and throws on
// failure; wall time is measured around the whole check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "cdemap/eval.hpp"
#include "cdemap/pipeline.hpp"
#include "cdemap/reservoir.hpp"
#include "cdemap/retrieval.hpp"
#include "cdemap/text.hpp"
#include "cdemap/vocab_store.hpp"
#include "exhaustive.hpp"
#include "fixture_env.hpp"
#include "oracles.hpp"
#include "reservoir_ops.hpp"

using namespace cdemap;
using cdemap::testing::fixture_env;
using cdemap::testing::fixture_llm;
using cdemap::testing::fixture_path;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename... Parts>
void require(bool ok, const Parts&... parts) {
    if (ok) return;
    std::ostringstream os;
    (os << ... << parts);
    throw Failure(os.str());
}

std::vector<OmopId> ids(const std::vector<Candidate>& cs) {
    std::vector<OmopId> out;
    for (const auto& c : cs) out.push_back(c.omop_id);
    return out;
}

std::vector<OmopId> ids(const std::vector<oracle::Hit>& hs) {
    std::vector<OmopId> out;
    for (const auto& h : hs) out.push_back(h.omop_id);
    return out;
}

std::vector<OmopId> ids(const std::vector<const Concept*>& cs) {
    std::vector<OmopId> out;
    for (const auto* c : cs) out.push_back(c->omop_id);
    return out;
}

bool contains(const std::vector<OmopId>& v, OmopId id) { return std::find(v.begin(), v.end(), id) != v.end(); }

const MappingResult& by_label(const std::vector<MappingResult>& rs, const std::string& label) {
    for (const auto& r : rs)
        if (r.entry.label == label) return r;
    throw Failure("no result for " + label);
}

const ComponentResult& component(const MappingResult& r, const std::string& key) {
    const auto* c = r.component(key);
    require(c != nullptr, r.entry.label, ": no component ", key);
    return *c;
}

// ---------------------------------------------------------------------------

std::string retrieval_oracle() {
    std::mt19937_64 rng(1000);
    auto vocab = oracle::random_vocabulary(rng, 1000);
    auto provider = std::make_shared<HashingEmbeddingProvider>();
    auto index = RetrievalIndex::build(vocab.store, provider);
    require(index.size() == 1000, "index has ", index.size(), " surfaces");

    std::uniform_int_distribution<std::size_t> pick(0, vocab.words.size() - 1);
    std::uniform_int_distribution<int> len(1, 3);
    double worst = 0.0;
    std::size_t compared = 0;
    for (int qi = 0; qi < 50; ++qi) {
        std::string q;
        for (int i = len(rng); i > 0; --i) q += (q.empty() ? "" : " ") + vocab.words[pick(rng)];
        for (std::size_t k : {1u, 10u, 50u}) {
            auto want_d = oracle::dense_search(*provider, vocab.surfaces, q, k);
            auto want_s = oracle::sparse_search(*provider, vocab.surfaces, q, k);
            auto want_m = oracle::fuse(want_d, want_s);
            auto got_d = index.retrieve_dense(q, k);
            auto got_m = index.merge_retrieve(q, k);
            require(ids(got_d) == ids(want_d), "dense order differs for '", q, "' k=", k);
            require(ids(got_m) == ids(want_m), "merged order differs for '", q, "' k=", k);
            for (std::size_t i = 0; i < got_d.size(); ++i)
                worst = std::max(worst, std::abs(*got_d[i].dense_score - want_d[i].score));
            for (std::size_t i = 0; i < got_m.size(); ++i)
                worst = std::max(worst, std::abs(got_m[i].fused_score - want_m[i].score));
            compared += got_d.size() + got_m.size();
        }
    }
    require(worst <= 1e-9, "max score difference ", worst);
    std::ostringstream os;
    os << "1000 surfaces, 50 queries, " << compared << " scores, max diff " << worst;
    return os.str();
}

std::string self_consistency_exhaustive() {
    auto rep = cdemap::testing::check_select_top_exhaustively({8}, {0.85, 0.5});
    require(rep.disagreements == 0, rep.disagreements, " disagreements, first: ", rep.first_disagreement);
    return std::to_string(rep.cases) + " vote matrices, 100% agreement";
}

std::string golden_replay() {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto results = map_dictionary(env.dictionary, ctx, 1);
    require(serialize_results(results, env.kb.store) == cdemap::testing::read_file(fixture_path("golden_results.json")),
            "serialized results differ from golden_results.json");

    const auto& ha = by_label(results, "heart attack - main cause of hospitalization");
    const std::vector<std::pair<std::string, OmopId>> worked{{"base_entity", 100}, {"associated_entities[0]", 540},
                                                             {"categories[0]", 530}, {"categories[1]", 531},
                                                             {"categories[2]", 532}, {"visit", 120}};
    require(ha.component_results.size() == worked.size(), "worked example has ", ha.component_results.size(),
            " components");
    std::size_t exact = 0;
    for (std::size_t i = 0; i < worked.size(); ++i) {
        const auto& c = ha.component_results[i];
        require(c.query.key == worked[i].first, "component ", i, " is ", c.query.key);
        require(c.outcome.omop_ids == std::vector<OmopId>{worked[i].second}, c.query.key, " mapped wrongly");
    }
    for (const auto& r : results)
        for (const auto& c : r.component_results)
            if (c.outcome.status == OutcomeStatus::exact_match) {
                require(c.rerank_calls == 0, r.entry.label, "/", c.query.key, " exact match made rerank calls");
                ++exact;
            }
    return "byte-identical, worked example 6/6, " + std::to_string(exact) + " exact components with 0 rerank calls";
}

std::string reservoir_dual_gate() {
    const auto& env = fixture_env();
    const std::vector<OmopId> pool{100, 101, 400, 403, 8507, 301, 410, 120};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Reservoir r(&env.kb.store, cdemap::testing::counting_clock());
        auto violation = cdemap::testing::ReservoirFuzzer(r, pool, seed).run(500);
        require(violation.empty(), "seed ", seed, ": ", violation);
    }

    // Warm run: approve everything the cold run queued, then map again.
    auto llm = fixture_llm();
    Reservoir warm_res(&env.kb.store, cdemap::testing::counting_clock());
    auto ctx = env.context(*llm, &warm_res);
    auto cold = map_dictionary(env.dictionary, ctx, 1);
    std::size_t cold_rerank = 0, warm_rerank_on_hits = 0, hits = 0;
    for (const auto& r : cold) cold_rerank += r.rerank_calls();
    for (const auto& e : warm_res.list_pending(1, 1000))
        warm_res.apply_decision(e.review_id, ReviewDecision::approve(), "acceptance");
    auto warm = map_dictionary(env.dictionary, ctx, 1);
    for (const auto& r : warm)
        for (const auto& c : r.component_results)
            if (warm_res.lookup(c.query.text)) {
                require(c.outcome.status == OutcomeStatus::reservoir_hit, c.query.text, " not served from reservoir");
                warm_rerank_on_hits += c.rerank_calls;
                ++hits;
            }
    require(warm_rerank_on_hits == 0, warm_rerank_on_hits, " rerank calls on approved labels");
    require(component(by_label(warm, "history of myocardial infarction"), "base_entity").outcome.status ==
                OutcomeStatus::reservoir_hit,
            "reranked label was not served warm");

    // Persistence: 1000 random operations, reopen, compare.
    auto path = (std::filesystem::temp_directory_path() / "cdemap_acceptance_reservoir.jsonl").string();
    std::filesystem::remove(path);
    std::vector<ReservoirEntry> before;
    {
        auto r = Reservoir::open(path, &env.kb.store, cdemap::testing::counting_clock());
        auto violation = cdemap::testing::ReservoirFuzzer(*r, pool, 1000).run(1000);
        require(violation.empty(), "persistent run: ", violation);
        before = r->entries();
    }
    auto reopened = Reservoir::open(path, &env.kb.store);
    bool same = reopened->entries() == before;
    reopened.reset();
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".compact");
    require(same, "reopened reservoir differs from the one written");

    std::ostringstream os;
    os << "gate held over 5x500 ops; warm run " << hits << " hits, rerank " << cold_rerank << " -> 0; "
       << before.size() << " entries round-tripped";
    return os.str();
}

// Dense vectors looked up by exact text.
class TableEmbedder final : public EmbeddingProvider {
public:
    std::map<std::string, std::vector<double>> table;
    DenseVector embed_dense(std::string_view text) override { return DenseVector{table.at(std::string(text))}; }
    SparseVector embed_sparse(std::string_view) override { return {}; }
    std::string provider_name() const override { return "table"; }
};

FilteredCandidate filtered(OmopId id, std::string surface) {
    Candidate c;
    c.omop_id = id;
    c.matched_surface = std::move(surface);
    return {c, "V", {}, std::nullopt};
}

std::vector<OmopId> ids(const std::vector<FilteredCandidate>& cs) {
    std::vector<OmopId> out;
    for (const auto& c : cs) out.push_back(c.candidate.omop_id);
    return out;
}

std::string filter_monotone() {
    std::mt19937_64 rng(200);
    std::uniform_real_distribution<double> coord(0.0, 1.0);
    std::uniform_int_distribution<int> size(0, 15);
    for (int trial = 0; trial < 200; ++trial) {
        TableEmbedder e;
        e.table["query"] = {coord(rng), coord(rng), coord(rng) + 0.01};
        std::vector<FilteredCandidate> cs;
        int n = size(rng);
        for (int i = 0; i < n; ++i) {
            std::string s = "s" + std::to_string(i);
            e.table[s] = {coord(rng), coord(rng), coord(rng) + 0.01};
            cs.push_back(filtered(100 + i, s));
        }
        double t1 = coord(rng), t2 = coord(rng);
        if (t1 > t2) std::swap(t1, t2);
        auto lo = ids(filter_by_similarity(cs, "query", e, t1));
        auto hi = ids(filter_by_similarity(cs, "query", e, t2));
        for (OmopId id : hi) require(contains(lo, id), "trial ", trial, ": ", id, " survives ", t2, " but not ", t1);
    }

    TableEmbedder e;
    e.table["q"] = {1.0, 0.0, 0.0};
    e.table["a"] = {0.6, 0.8, 0.0};
    double sim = cosine(e.embed_dense("a"), e.embed_dense("q"));
    require(filter_by_similarity({filtered(1, "a")}, "q", e, sim).size() == 1, "similarity == tau was dropped");
    require(filter_by_similarity({filtered(1, "a")}, "q", e, std::nextafter(sim, 2.0)).empty(),
            "similarity below tau survived");
    return "200 random sets nested; similarity == tau survives";
}

std::string synonym_expansion() {
    auto raw = load_vocabulary(fixture_path("kb/concepts.csv"), fixture_path("kb/synonyms.csv"),
                               fixture_path("kb/relationships.csv"));
    auto once = expand_synonyms(raw);
    require(expand_synonyms(once) == once, "expansion is not idempotent");

    require(ids(once.find_exact("Carvedilol")) == std::vector<OmopId>{300, 301}, "Maps to did not merge ATC into ingredient");
    require(ids(once.find_exact("Coreg")) == std::vector<OmopId>{301, 302}, "Trade name did not reach the ingredient");
    require(!once.get_concept(302).synonyms.count("carvedilol"), "brand gained the ingredient name");
    require(!once.get_concept(300).synonyms.count("coreg"), "expansion went more than one hop");
    require(!once.get_concept(101).synonyms.count("myocardial infarction"), "Is a was treated as equivalence");

    std::size_t ucum = 0;
    for (const auto& c : once.concepts()) {
        if (c.vocabulary != "UCUM") continue;
        require(contains(ids(once.find_exact(c.code)), c.omop_id), "UCUM code ", c.code, " not found");
        require(contains(ids(once.find_exact(c.name)), c.omop_id), "UCUM name ", c.name, " not found");
        ++ucum;
    }
    require(ids(once.find_exact("mm[Hg]")) == std::vector<OmopId>{420} &&
                ids(once.find_exact("millimeter mercury column")) == std::vector<OmopId>{420},
            "mm[Hg] code and label disagree");
    return "idempotent, Maps to/Trade name directed, " + std::to_string(ucum) + " UCUM units found by code and name";
}

std::string metrics() {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<OmopId> id(1, 30);
    std::vector<RankedResult> rs;
    std::vector<GoldMapping> gold;
    for (int i = 0; i < 100; ++i) {
        std::vector<OmopId> ranking;
        for (int j = 0; j < 10; ++j) ranking.push_back(id(rng));
        rs.push_back({"l" + std::to_string(i), "base_entity", ranking});
        gold.push_back({"l" + std::to_string(i), "base_entity", {id(rng)}});
    }
    double prev = 0.0;
    for (std::size_t k = 1; k <= 12; ++k) {
        double a = acc_at_k(rs, gold, k);
        require(a >= prev, "acc@", k, " = ", a, " < acc@", k - 1, " = ", prev);
        prev = a;
    }

    double ndcg = ndcg_binary({5, 7, 8}, {7}, 3);
    // Hand value 1/log2(3) = 0.6309297536; 0.6309 is its four-decimal rounding.
    require(std::abs(ndcg - 0.6309297536) <= 1e-6, "NDCG rank 2, k 3 = ", ndcg);
    require(std::round(ndcg * 1e4) / 1e4 == 0.6309, "NDCG does not round to 0.6309: ", ndcg);

    DecomposedQuery g;
    g.refined_query = g.base_entity = "NT-proBNP";
    g.categories = {"Yes", "No"};
    g.unit = "pmol/L";
    g.visit = "baseline";
    DecomposedQuery p = g;
    p.method = "immunoassay";
    auto s = decomposition_scores({p}, {g});
    require(std::abs(s.attribute.f1 - 0.889) <= 1e-3, "spurious-attribute F1 = ", s.attribute.f1);

    char buf[160];
    std::snprintf(buf, sizeof buf, "acc@1..12 monotone, NDCG %.7f, spurious-attribute F1 %.4f", ndcg, s.attribute.f1);
    return buf;
}

std::string regression_cases() {
    const auto& env = fixture_env();
    auto llm = fixture_llm();
    auto ctx = env.context(*llm);
    auto rs = map_dictionary(env.dictionary, ctx, 1);
    const auto& unit = component(by_label(rs, "NT-proBNP"), "unit");
    require(unit.outcome.status == OutcomeStatus::exact_match && unit.outcome.omop_ids == std::vector<OmopId>{400},
            "pmol/L resolved to ", unit.outcome.omop_ids.empty() ? 0 : unit.outcome.omop_ids.front());
    const auto& man = component(by_label(rs, "man"), "base_entity");
    require(man.outcome.status == OutcomeStatus::exact_match && man.outcome.omop_ids == std::vector<OmopId>{8507},
            "man resolved to ", man.outcome.omop_ids.empty() ? 0 : man.outcome.omop_ids.front());
    return "pmol/L -> 400 picomole per liter (not 401 micromole); man -> 8507 MALE";
}

struct Criterion {
    const char* name;
    double budget_ms;  // 0 = no time limit
    std::function<std::string()> run;
};

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    const std::vector<Criterion> criteria{
        {"retrieval_oracle_equivalence", 10000, retrieval_oracle},
        {"self_consistency_exhaustive", 1000, self_consistency_exhaustive},
        {"golden_replay", 5000, golden_replay},
        {"reservoir_dual_gate", 0, reservoir_dual_gate},
        {"filter_monotonicity", 0, filter_monotone},
        {"synonym_expansion", 0, synonym_expansion},
        {"metrics", 0, metrics},
        {"regression_cases", 0, regression_cases},
    };

    // Load fixtures outside the timed checks.
    fixture_env();

    int failed = 0;
    for (const auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (ok && c.budget_ms > 0 && ms >= c.budget_ms) {
            ok = false;
            detail += " (over the " + std::to_string(static_cast<int>(c.budget_ms)) + " ms budget)";
        }
        std::printf("%s %-30s %8.1f ms  %s\n", ok ? "PASS" : "FAIL", c.name, ms, detail.c_str());
        failed += ok ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
