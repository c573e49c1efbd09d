#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/kb.hpp"
#include "cdemap/llm.hpp"
#include "cdemap/pipeline.hpp"
#include "cdemap/providers.hpp"
#include "cdemap/reservoir.hpp"

namespace cdemap::testing {

// Absolute path of a file under tests/fixtures.
std::string fixture_path(const std::string& rel);

nlohmann::json read_json(const std::string& path);
std::string read_file(const std::string& path);

// Fixture knowledge base indexed with the hashing provider, fixture rules,
// and the same pipeline configuration the CLI uses by default.
struct FixtureEnv {
    KnowledgeBase kb;
    std::shared_ptr<HashingEmbeddingProvider> embedder;
    std::unique_ptr<RetrievalIndex> index;
    PipelineConfig config;
    std::vector<DataDictionaryEntry> dictionary;

    FixtureEnv();
    PipelineContext context(LLMProvider& llm, Reservoir* reservoir = nullptr) const;
};

// Loaded once per process; read-only afterwards.
const FixtureEnv& fixture_env();

// Recorded completions for the fixture dictionary.
std::shared_ptr<ScriptedLLMProvider> fixture_llm();

// Clock that advances one millisecond per call, starting at `start`.
Reservoir::Clock counting_clock(Millis start = 1700000000000);

}  // namespace cdemap::testing
