#include "cdemap/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"

namespace cdemap {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view outcome_status_name(OutcomeStatus s) {
    switch (s) {
        case OutcomeStatus::exact_match: return "exact_match";
        case OutcomeStatus::reranked: return "reranked";
        case OutcomeStatus::reservoir_hit: return "reservoir_hit";
        case OutcomeStatus::na: return kNotAvailable;
    }
    return kNotAvailable;
}

std::optional<OutcomeStatus> parse_outcome_status(std::string_view s) {
    for (auto st : {OutcomeStatus::exact_match, OutcomeStatus::reranked, OutcomeStatus::reservoir_hit, OutcomeStatus::na})
        if (outcome_status_name(st) == s) return st;
    return std::nullopt;
}

std::vector<ComponentQuery> enumerate_components(const DecomposedQuery& q) {
    std::vector<ComponentQuery> out;
    out.push_back({"base_entity", q.base_entity, q.domain_hint});
    for (std::size_t i = 0; i < q.associated_entities.size(); ++i)
        out.push_back({"associated_entities[" + std::to_string(i) + "]", q.associated_entities[i], std::nullopt});
    for (std::size_t i = 0; i < q.categories.size(); ++i)
        out.push_back({"categories[" + std::to_string(i) + "]", q.categories[i], std::nullopt});
    if (q.unit) out.push_back({"unit", *q.unit, std::string("Unit")});
    if (q.visit) out.push_back({"visit", *q.visit, std::nullopt});
    if (q.method) out.push_back({"method", *q.method, std::nullopt});
    if (q.formula) out.push_back({"formula", *q.formula, std::nullopt});
    return out;
}

const ComponentResult* MappingResult::component(std::string_view key) const {
    for (const auto& c : component_results)
        if (c.query.key == key) return &c;
    return nullptr;
}

std::size_t MappingResult::rerank_calls() const {
    std::size_t n = 0;
    for (const auto& c : component_results) n += c.rerank_calls;
    return n;
}

std::size_t MappingResult::llm_calls() const {
    std::size_t n = decompose_calls;
    for (const auto& c : component_results) n += c.rerank_calls + c.judge_calls;
    return n;
}

void PipelineConfig::validate() const {
    if (k < 1) throw InvalidConfig("k must be >= 1");
    filter.validate();
    rerank.validate();
}

TraceRecorder& TraceRecorder::step(std::string component, std::string stage, ordered_json detail, double elapsed_ms) {
    steps_.push_back({steps_.size() + 1, std::move(component), std::move(stage), std::move(detail), elapsed_ms});
    return *this;
}

namespace {

class Stopwatch {
public:
    double lap() {
        auto now = std::chrono::steady_clock::now();
        double ms = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
        return ms;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

ordered_json id_list(const std::vector<Candidate>& cands) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : cands) arr.push_back(c.omop_id);
    return arr;
}

ordered_json id_list(const std::vector<FilteredCandidate>& cands) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : cands) arr.push_back(c.candidate.omop_id);
    return arr;
}

std::string error_text(const Error& e) { return std::string(e.code_name()) + ": " + e.what(); }

json review_context(const ComponentQuery& q, const std::string& directive_text, const ConceptStore& store,
                    const std::vector<FilteredCandidate>& survivors, const std::vector<ScoredCandidate>& ordered,
                    const ComponentOutcome& outcome) {
    json ctx;
    ctx["component"] = q.key;
    ctx["query"] = q.text;
    ctx["refined_query"] = directive_text;
    if (q.domain_hint) ctx["domain_hint"] = *q.domain_hint;
    ctx["outcome"] = outcome_status_name(outcome.status);
    json cands = json::array();
    auto describe = [&](OmopId id, const FilteredCandidate* f, const ScoredCandidate* s) {
        const Concept& c = store.get_concept(id);
        json o;
        o["omop_id"] = id;
        o["code"] = c.code;
        o["name"] = c.name;
        o["vocabulary"] = c.vocabulary;
        if (f && f->similarity) o["similarity"] = *f->similarity;
        if (s) {
            o["confidence"] = s->confidence;
            o["mean_score"] = s->mean_score();
            o["scores"] = s->relevance_scores;
        }
        cands.push_back(std::move(o));
    };
    auto survivor = [&](OmopId id) -> const FilteredCandidate* {
        for (const auto& f : survivors)
            if (f.candidate.omop_id == id) return &f;
        return nullptr;
    };
    if (!ordered.empty()) {
        for (const auto& s : ordered) describe(s.candidate.omop_id, survivor(s.candidate.omop_id), &s);
    } else {
        for (const auto& f : survivors) describe(f.candidate.omop_id, &f, nullptr);
    }
    ctx["candidates"] = std::move(cands);
    return ctx;
}

}  // namespace

ComponentResult map_component(const ComponentQuery& q, const std::string& directive_text, PipelineContext& ctx,
                              TraceRecorder& trace) {
    ComponentResult r;
    r.query = q;
    const auto& cfg = ctx.config;
    Stopwatch sw;

    if (ctx.reservoir) {
        if (auto hit = ctx.reservoir->lookup(q.text)) {
            r.outcome.status = OutcomeStatus::reservoir_hit;
            for (const auto& c : hit->concepts) r.outcome.omop_ids.push_back(c.omop_id);
            r.ranking = r.outcome.omop_ids;
            trace.step(q.key, "reservoir", {{"hit", true}}, sw.lap());
            return r;
        }
    }
    trace.step(q.key, "reservoir", {{"hit", false}}, sw.lap());

    std::string stage = "retrieval";
    try {
        auto candidates = ctx.index.merge_retrieve(q.text, cfg.k);
        r.retrieval_calls = 1;
        trace.step(q.key, "retrieval", {{"k", cfg.k}, {"candidates", id_list(candidates)}}, sw.lap());

        stage = "linking_rules";
        auto routed = apply_linking_rules(attach_vocabulary(candidates, ctx.store), directive_text, q.domain_hint,
                                          cfg.filter.rules);
        ordered_json rules_detail;
        rules_detail["domain"] = q.domain_hint ? ordered_json(*q.domain_hint) : ordered_json(nullptr);
        rules_detail["kept"] = id_list(routed);
        trace.step(q.key, "linking_rules", std::move(rules_detail), sw.lap());

        stage = "similarity_filter";
        auto survivors = filter_by_similarity(routed, q.text, ctx.index.provider(), cfg.filter.tau);
        trace.step(q.key, "similarity_filter", {{"tau", cfg.filter.tau}, {"kept", id_list(survivors)}}, sw.lap());
        if (survivors.empty()) return r;

        std::set<OmopId> exact_ids;
        for (const Concept* c : ctx.store.find_exact(q.text)) exact_ids.insert(c->omop_id);
        auto exact = std::find_if(survivors.begin(), survivors.end(),
                                  [&](const FilteredCandidate& f) { return exact_ids.count(f.candidate.omop_id) != 0; });

        std::vector<ScoredCandidate> ordered;
        if (exact != survivors.end()) {
            OmopId id = exact->candidate.omop_id;
            r.outcome.status = OutcomeStatus::exact_match;
            r.outcome.omop_ids = {id};
            r.ranking.push_back(id);
            for (const auto& f : survivors)
                if (f.candidate.omop_id != id) r.ranking.push_back(f.candidate.omop_id);
            trace.step(q.key, "exact_match", {{"omop_id", id}}, sw.lap());
        } else {
            stage = "rerank";
            CountingLLMProvider counter(ctx.llm);
            SelfConsistencyResult sc;
            try {
                sc = self_consistency(q.text, survivors, ctx.store, counter, cfg.rerank);
            } catch (...) {
                r.rerank_calls = counter.calls();
                throw;
            }
            r.rerank_calls = counter.calls();
            ordered = decision_order(sc.scored);
            for (const auto& s : ordered) r.ranking.push_back(s.candidate.omop_id);
            auto decision = select_top(sc.scored, cfg.rerank);

            ordered_json scores = ordered_json::array();
            for (const auto& s : ordered)
                scores.push_back({{"omop_id", s.candidate.omop_id},
                                  {"scores", s.relevance_scores},
                                  {"confidence", s.confidence}});
            ordered_json detail;
            detail["calls"] = r.rerank_calls;
            detail["failed_rounds"] = sc.failed_rounds;
            detail["scored"] = std::move(scores);
            detail["selected"] = decision.is_na() ? ordered_json(nullptr)
                                                  : ordered_json(decision.selected->candidate.omop_id);
            trace.step(q.key, "rerank", std::move(detail), sw.lap());
            if (decision.is_na()) return r;
            r.outcome.status = OutcomeStatus::reranked;
            r.outcome.omop_ids = {decision.selected->candidate.omop_id};
            r.outcome.confidence = decision.selected->confidence;
        }

        if (ctx.reservoir) {
            // A judge or enqueue failure does not undo the mapping.
            try {
                const Concept& c = ctx.store.get_concept(r.outcome.omop_ids.front());
                CountingLLMProvider counter(ctx.llm);
                try {
                    r.judgement = judge(q.text, {&c}, counter);
                } catch (...) {
                    r.judge_calls = counter.calls();
                    throw;
                }
                r.judge_calls = counter.calls();
                trace.step(q.key, "judge", {{"judgement", judgement_name(*r.judgement)}}, sw.lap());
                r.review_id = ctx.reservoir->enqueue(
                    q.text, {{c.code, c.omop_id, ""}}, *r.judgement,
                    review_context(q, directive_text, ctx.store, survivors, ordered, r.outcome));
                trace.step(q.key, "enqueue", {{"queued", r.review_id.has_value()}}, sw.lap());
            } catch (const Error& e) {
                spdlog::warn("component '{}' ({}): review gate failed: {}", q.key, q.text, e.what());
                trace.step(q.key, "judge", {{"error", error_text(e)}}, sw.lap());
            }
        }
    } catch (const Error& e) {
        spdlog::warn("component '{}' ({}): {} failed: {}", q.key, q.text, stage, e.what());
        r.outcome = {};
        r.outcome.error = error_text(e);
        trace.step(q.key, stage, {{"error", error_text(e)}}, sw.lap());
    }
    return r;
}

namespace {

ComponentResult entry_na(const MappingResult& res, const Error& e) {
    ComponentResult c;
    c.query = {std::string(kEntryComponent), res.entry.label, std::nullopt};
    c.outcome.error = error_text(e);
    return c;
}

}  // namespace

MappingResult map_entry(const DataDictionaryEntry& entry, PipelineContext& ctx) {
    MappingResult res;
    res.entry = entry;
    TraceRecorder trace;
    Stopwatch sw;
    std::string entry_key(kEntryComponent);

    DataDictionaryEntry valid;
    try {
        valid = validate_input(entry);
    } catch (const Error& e) {
        trace.step(entry_key, "validate", {{"error", error_text(e)}}, sw.lap());
        res.component_results.push_back(entry_na(res, e));
        res.trace = trace.take();
        return res;
    }

    CountingLLMProvider counter(ctx.llm);
    try {
        auto d = decompose(valid, counter, ctx.bank, ctx.index.provider(), ctx.config.decompose);
        res.decompose_calls = counter.calls();
        res.decomposition = std::move(d.query);
        trace.step(entry_key, "decompose", {{"attempts", d.attempts}, {"bypassed", d.bypassed}}, sw.lap());
    } catch (const Error& e) {
        res.decompose_calls = counter.calls();
        spdlog::warn("entry '{}': decomposition failed: {}", entry.label, e.what());
        trace.step(entry_key, "decompose", {{"error", error_text(e)}}, sw.lap());
        res.component_results.push_back(entry_na(res, e));
        res.trace = trace.take();
        return res;
    }

    for (const auto& q : enumerate_components(*res.decomposition))
        res.component_results.push_back(map_component(q, res.decomposition->refined_query, ctx, trace));
    res.trace = trace.take();
    return res;
}

std::vector<MappingResult> map_dictionary(const std::vector<DataDictionaryEntry>& entries, PipelineContext& ctx,
                                          std::size_t parallelism, const ProgressFn& progress) {
    if (parallelism < 1) throw InvalidConfig("parallelism must be >= 1");
    std::vector<MappingResult> results(entries.size());
    std::atomic<std::size_t> next{0};
    std::size_t completed = 0;
    std::mutex progress_mu;

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < entries.size(); i = next.fetch_add(1)) {
            results[i] = map_entry(entries[i], ctx);
            std::lock_guard lock(progress_mu);
            ++completed;
            if (progress) progress(completed, entries.size());
        }
    };
    std::size_t threads = std::min(parallelism, entries.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return results;
}

namespace {

ordered_json concept_fields(const ConceptStore& store, OmopId id) {
    ordered_json o;
    o["omop_id"] = id;
    if (const Concept* c = store.find(id)) {
        o["code"] = c->code;
        o["vocabulary"] = c->vocabulary;
        o["concept_name"] = c->name;
    }
    return o;
}

ordered_json component_json(const ComponentResult& c, const ConceptStore& store) {
    ordered_json o;
    o["text"] = c.query.text;
    o["status"] = outcome_status_name(c.outcome.status);
    switch (c.outcome.status) {
        case OutcomeStatus::exact_match:
        case OutcomeStatus::reranked:
            o.update(concept_fields(store, c.outcome.omop_ids.front()));
            if (c.outcome.confidence) o["confidence"] = *c.outcome.confidence;
            break;
        case OutcomeStatus::reservoir_hit: {
            ordered_json arr = ordered_json::array();
            for (OmopId id : c.outcome.omop_ids) arr.push_back(concept_fields(store, id));
            o["concepts"] = std::move(arr);
            break;
        }
        case OutcomeStatus::na: break;
    }
    if (c.judgement) o["judgement"] = judgement_name(*c.judgement);
    if (c.outcome.error) o["error"] = *c.outcome.error;
    return o;
}

}  // namespace

ordered_json result_to_json(const MappingResult& r, const ConceptStore& store, const ResultFormat& fmt) {
    ordered_json o;
    o["name"] = r.entry.name;
    o["label"] = r.entry.label;
    o["decomposition"] = r.decomposition ? decomposition_to_json(*r.decomposition) : ordered_json(nullptr);
    ordered_json comps = ordered_json::object();
    for (const auto& c : r.component_results) comps[c.query.key] = component_json(c, store);
    o["component_results"] = std::move(comps);
    if (!fmt.trace) return o;

    ordered_json t;
    std::size_t rerank = 0, judge_calls = 0;
    for (const auto& c : r.component_results) {
        rerank += c.rerank_calls;
        judge_calls += c.judge_calls;
    }
    t["llm_calls"] = {{"decompose", r.decompose_calls}, {"rerank", rerank}, {"judge", judge_calls}};
    ordered_json rankings = ordered_json::object();
    for (const auto& c : r.component_results) rankings[c.query.key] = c.ranking;
    t["rankings"] = std::move(rankings);
    ordered_json steps = ordered_json::array();
    for (const auto& s : r.trace) {
        ordered_json st;
        st["seq"] = s.seq;
        st["component"] = s.component;
        st["stage"] = s.stage;
        if (!s.detail.is_null()) st["detail"] = s.detail;
        if (fmt.timings) st["elapsed_ms"] = s.elapsed_ms;
        steps.push_back(std::move(st));
    }
    t["steps"] = std::move(steps);
    o["trace"] = std::move(t);
    return o;
}

ordered_json results_to_json(const std::vector<MappingResult>& results, const ConceptStore& store,
                             const ResultFormat& fmt) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : results) arr.push_back(result_to_json(r, store, fmt));
    return arr;
}

std::string serialize_results(const std::vector<MappingResult>& results, const ConceptStore& store,
                              const ResultFormat& fmt) {
    return results_to_json(results, store, fmt).dump(2) + "\n";
}

void write_results(const std::string& path, const std::vector<MappingResult>& results, const ConceptStore& store,
                   const ResultFormat& fmt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << serialize_results(results, store, fmt);
    if (!out) throw IoError("cannot write " + path);
}

}  // namespace cdemap
