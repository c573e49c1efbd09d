#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cdemap/embedding.hpp"
#include "cdemap/llm.hpp"

namespace cdemap {

// Offline stand-in for an LLM. Recognizes the decomposition, rerank and judge
// prompts built by this library and answers from an optional answer table,
// falling back to simple lexical heuristics.
//
// Answer table:
//   {"decompositions": {"<label>": {<decomposition record>}},
//    "scores": {"<query>": {"<concept name>": <1..10> | [<round 0>, <round 1>, ...]}},
//    "judgements": {"<label>": "correct" | "partially correct" | "incorrect"}}
// Keys are compared after surface normalization. A per-round score list is
// indexed by seed modulo its length.
class MockLLMProvider final : public LLMProvider {
public:
    MockLLMProvider() = default;
    explicit MockLLMProvider(const nlohmann::json& answers);
    static std::shared_ptr<MockLLMProvider> from_file(const std::string& path);

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override;
    std::string provider_name() const override { return "mock"; }

private:
    std::string decompose(const std::string& prompt) const;
    std::string rerank(const std::string& prompt, std::uint64_t seed) const;
    std::string judge(const std::string& prompt) const;

    std::map<std::string, nlohmann::json> decompositions_;
    std::map<std::string, std::map<std::string, std::vector<int>>> scores_;
    std::map<std::string, std::string> judgements_;
};

// Body of the section that starts with "### <title>\n", up to the next
// "\n### " heading (exclusive); nullopt when absent.
std::optional<std::string> prompt_section(const std::string& prompt, const std::string& title);

// Lexical score used by the mock reranker: 10 for an exact surface match,
// otherwise 1 + round(8 * token Dice coefficient).
int lexical_score(std::string_view query, std::string_view name);

struct WireEndpoint {
    std::string host;    // scheme://host:port
    std::string prefix;  // path prefix without trailing slash
    std::chrono::milliseconds timeout{30000};

    // "http://localhost:8080/api" -> {"http://localhost:8080", "/api"}.
    static WireEndpoint parse(const std::string& url);
};

// POST {prefix}/embed {"texts":[...]} -> {"vectors":[[...]]};
// POST {prefix}/sparse {"texts":[...]} -> {"entries":[[{"term","weight"}...]]}.
class WireEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit WireEmbeddingProvider(WireEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

    DenseVector embed_dense(std::string_view text) override;
    SparseVector embed_sparse(std::string_view text) override;
    std::string provider_name() const override { return "wire(" + endpoint_.host + endpoint_.prefix + ")"; }

private:
    WireEndpoint endpoint_;
};

// POST {prefix}/complete {"prompt","temperature","seed"} -> {"text"}.
class WireLLMProvider final : public LLMProvider {
public:
    explicit WireLLMProvider(WireEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override;
    std::string provider_name() const override { return "wire(" + endpoint_.host + endpoint_.prefix + ")"; }

private:
    WireEndpoint endpoint_;
};

// Posts a JSON body and parses the JSON reply; any transport, status or
// parse problem raises ProviderFailure.
nlohmann::json post_json(const WireEndpoint& endpoint, const std::string& path, const nlohmann::json& body);

}  // namespace cdemap
