#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"
#include "cdemap/eval.hpp"
#include "cdemap/kb.hpp"
#include "cdemap/pipeline.hpp"
#include "cdemap/providers.hpp"
#include "cdemap/reservoir.hpp"
#include "cdemap/service.hpp"
#include "cdemap/text.hpp"

using namespace cdemap;

namespace {

struct ProviderOptions {
    std::string kind = "mock";
    std::string llm_url = "http://127.0.0.1:8081";
    std::string embed_url;
    std::string fixture;  // mock answer table or scripted completions
};

void add_provider_options(CLI::App* cmd, ProviderOptions& o) {
    cmd->add_option("--provider", o.kind, "LLM provider: mock, scripted or wire")
        ->check(CLI::IsMember({"mock", "scripted", "wire"}));
    cmd->add_option("--llm-url", o.llm_url, "base URL of the completion service (wire)");
    cmd->add_option("--embed-url", o.embed_url, "base URL of the embedding service; hashing embeddings when empty");
    cmd->add_option("--llm-fixture", o.fixture, "answer table (mock) or completions file (scripted)");
}

std::shared_ptr<EmbeddingProvider> make_embedder(const ProviderOptions& o) {
    if (o.embed_url.empty()) return std::make_shared<HashingEmbeddingProvider>();
    return std::make_shared<WireEmbeddingProvider>(WireEndpoint::parse(o.embed_url));
}

std::shared_ptr<LLMProvider> make_llm(const ProviderOptions& o) {
    if (o.kind == "wire") return std::make_shared<WireLLMProvider>(WireEndpoint::parse(o.llm_url));
    if (o.kind == "scripted") {
        if (o.fixture.empty()) throw InvalidConfig("--provider scripted needs --llm-fixture");
        return ScriptedLLMProvider::from_file(o.fixture);
    }
    if (!o.fixture.empty()) return MockLLMProvider::from_file(o.fixture);
    return std::make_shared<MockLLMProvider>();
}

struct PipelineOptions {
    std::string kb;
    std::string rules;
    std::string reservoir;
    std::size_t k = kDefaultTopK;
    double tau = kDefaultSimilarityThreshold;
    int n = 3;
    int t = 8;
    double tau_rel = 0.85;
    std::size_t examples = kDefaultExampleCount;
};

void add_pipeline_options(CLI::App* cmd, PipelineOptions& o) {
    cmd->add_option("--kb", o.kb, "knowledge base directory")->required();
    cmd->add_option("--rules", o.rules, "linking rules file (built-in defaults when omitted)");
    cmd->add_option("--reservoir", o.reservoir, "reservoir record log");
    cmd->add_option("--k", o.k, "candidates retrieved per component")->check(CLI::PositiveNumber);
    cmd->add_option("--tau", o.tau, "similarity filter threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--n", o.n, "self-consistency rounds")->check(CLI::PositiveNumber);
    cmd->add_option("--t", o.t, "vote threshold on the 1-10 scale")->check(CLI::Range(1, 10));
    cmd->add_option("--tau-rel", o.tau_rel, "confidence a candidate must exceed")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--examples", o.examples, "in-context examples per decomposition");
}

// Owns everything a PipelineContext points at.
struct Runtime {
    KnowledgeBase kb;
    std::unique_ptr<RetrievalIndex> index;
    std::shared_ptr<LLMProvider> llm;
    std::unique_ptr<Reservoir> reservoir;
    PipelineConfig config;

    PipelineContext context() { return PipelineContext{kb.store, *index, *llm, kb.bank, reservoir.get(), config}; }
};

std::unique_ptr<Runtime> make_runtime(const PipelineOptions& p, const ProviderOptions& prov) {
    auto rt = std::make_unique<Runtime>();
    rt->kb = load_knowledge_base(p.kb);
    rt->index = std::make_unique<RetrievalIndex>(index_knowledge_base(rt->kb, make_embedder(prov)));
    rt->llm = make_llm(prov);
    if (!p.reservoir.empty()) rt->reservoir = Reservoir::open(p.reservoir, &rt->kb.store);

    auto& c = rt->config;
    c.k = p.k;
    c.filter.tau = p.tau;
    c.filter.rules = p.rules.empty() ? LinkingRules::defaults() : LinkingRules::from_file(p.rules);
    c.filter.rules.validate(rt->kb.store);
    c.rerank.n = p.n;
    c.rerank.t = p.t;
    c.rerank.tau_rel = p.tau_rel;
    c.decompose.example_count = p.examples;
    c.decompose.rules_text = c.filter.rules.describe();
    c.validate();
    return rt;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
    std::vector<std::size_t> ks;
    for (const auto& part : text::split(s, ',')) {
        std::string v = text::trim(part);
        if (v.empty()) continue;
        try {
            std::size_t used = 0;
            long long k = std::stoll(v, &used);
            if (used != v.size() || k < 1) throw std::invalid_argument(v);
            ks.push_back(static_cast<std::size_t>(k));
        } catch (const std::exception&) {
            throw InvalidConfig("bad k value '" + v + "'");
        }
    }
    if (ks.empty()) throw InvalidConfig("--k needs at least one value");
    return ks;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinical data element to vocabulary concept mapper"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    ProviderOptions prov;
    PipelineOptions popt;

    auto* map_cmd = app.add_subcommand("map", "map a data dictionary");
    std::string dict_path, out_path;
    std::size_t parallelism = 1;
    bool trace = false, timings = false;
    map_cmd->add_option("--dict", dict_path, "data dictionary (.csv or .json)")->required();
    map_cmd->add_option("--out", out_path, "results file")->required();
    map_cmd->add_option("--parallelism", parallelism, "entries mapped concurrently")->check(CLI::PositiveNumber);
    map_cmd->add_flag("--trace", trace, "include per-stage trace and rankings");
    map_cmd->add_flag("--timings", timings, "include stage timings in the trace");
    add_pipeline_options(map_cmd, popt);
    add_provider_options(map_cmd, prov);

    auto* eval_cmd = app.add_subcommand("eval", "score mapping results against a gold file");
    std::string results_path, gold_path, ks_text = "1,3,5,10", records_path;
    eval_cmd->add_option("--results", results_path, "results file written by map --trace")->required();
    eval_cmd->add_option("--gold", gold_path, "gold CSV label,component,gold_omop_ids")->required();
    eval_cmd->add_option("--k", ks_text, "comma-separated cutoffs");
    eval_cmd->add_option("--records", records_path, "machine-readable report output");

    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
    std::string host = "127.0.0.1", ui_dir;
    int port = 8080;
    std::size_t serve_parallelism = 2;
    serve_cmd->add_option("--host", host, "listen address");
    serve_cmd->add_option("--port", port, "listen port")->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--parallelism", serve_parallelism, "entries mapped concurrently per job")
        ->check(CLI::PositiveNumber);
    serve_cmd->add_option("--ui", ui_dir, "static review UI directory served under /ui");
    add_pipeline_options(serve_cmd, popt);
    add_provider_options(serve_cmd, prov);

    auto* search_cmd = app.add_subcommand("search", "merged retrieval for one query");
    std::string query;
    search_cmd->add_option("--query,-q", query, "query text")->required();
    search_cmd->add_option("--kb", popt.kb, "knowledge base directory")->required();
    search_cmd->add_option("--k", popt.k, "candidates")->check(CLI::PositiveNumber);
    search_cmd->add_option("--embed-url", prov.embed_url, "embedding service base URL");

    auto* index_cmd = app.add_subcommand("index", "precompute dense vectors for a knowledge base");
    std::string index_out;
    index_cmd->add_option("--kb", popt.kb, "knowledge base directory")->required();
    index_cmd->add_option("--out", index_out, "embeddings.tsv to write")->required();
    index_cmd->add_option("--embed-url", prov.embed_url, "embedding service base URL");

    auto* export_cmd = app.add_subcommand("export", "export servable reservoir entries");
    std::string dictionary_out, triples_out;
    export_cmd->add_option("--reservoir", popt.reservoir, "reservoir record log")->required();
    export_cmd->add_option("--dictionary", dictionary_out, "lookup dictionary JSON output");
    export_cmd->add_option("--triples", triples_out, "N-Triples-style output");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::stderr_color_mt("cdemap"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (map_cmd->parsed()) {
            auto rt = make_runtime(popt, prov);
            auto entries = load_dictionary(dict_path);
            auto ctx = rt->context();
            auto results = map_dictionary(entries, ctx, parallelism, [](std::size_t done, std::size_t total) {
                spdlog::info("mapped {}/{}", done, total);
            });
            write_results(out_path, results, rt->kb.store, ResultFormat{trace, timings});
            std::size_t na = 0, comps = 0;
            for (const auto& r : results)
                for (const auto& c : r.component_results) {
                    ++comps;
                    if (c.outcome.status == OutcomeStatus::na) ++na;
                }
            std::printf("%zu entries, %zu components, %zu NA -> %s\n", results.size(), comps, na, out_path.c_str());
        } else if (eval_cmd->parsed()) {
            auto report = evaluate(load_rankings(results_path), load_gold(gold_path), parse_ks(ks_text));
            std::fputs(report.to_text().c_str(), stdout);
            if (!records_path.empty()) {
                std::ofstream out(records_path);
                if (!out) throw IoError("cannot write " + records_path);
                out << report.to_json().dump(2) << '\n';
            }
        } else if (serve_cmd->parsed()) {
            if (popt.reservoir.empty()) throw InvalidConfig("serve needs --reservoir");
            auto rt = make_runtime(popt, prov);
            ServiceConfig sc;
            sc.parallelism = serve_parallelism;
            sc.rules_path = popt.rules;
            sc.ui_dir = ui_dir;
            Service service(rt->context(), sc);
            httplib::Server server;
            service.register_routes(server);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            spdlog::info("listening on http://{}:{}", host, port);
            if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
            g_server = nullptr;
        } else if (search_cmd->parsed()) {
            auto kb = load_knowledge_base(popt.kb);
            auto index = index_knowledge_base(kb, make_embedder(prov));
            for (const auto& c : index.merge_retrieve(query, popt.k)) {
                const Concept& cpt = kb.store.get_concept(c.omop_id);
                std::printf("%-10lld %-8s %-12s %.6f  %s  [%s]\n", static_cast<long long>(c.omop_id),
                            cpt.vocabulary.c_str(), cpt.code.c_str(), c.fused_score, cpt.name.c_str(),
                            c.matched_surface.c_str());
            }
        } else if (index_cmd->parsed()) {
            auto kb = load_knowledge_base(popt.kb);
            kb.precomputed.reset();
            auto index = index_knowledge_base(kb, make_embedder(prov));
            write_precomputed(index_out, index.dense_rows());
            std::printf("%zu vectors of dim %zu -> %s\n", index.size(), index.dim(), index_out.c_str());
        } else if (export_cmd->parsed()) {
            auto reservoir = Reservoir::open(popt.reservoir);
            if (!dictionary_out.empty()) export_dictionary(*reservoir, dictionary_out);
            if (!triples_out.empty()) export_triples(*reservoir, triples_out);
            std::printf("%zu servable entries\n", export_dictionary(*reservoir).size());
        }
    } catch (const Error& e) {
        spdlog::error("{}: {}", e.code_name(), e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
