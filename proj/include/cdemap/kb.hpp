#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdemap/decomposer.hpp"
#include "cdemap/embedding.hpp"
#include "cdemap/retrieval.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

// A knowledge-base directory: concepts.csv, synonyms.csv, relationships.csv,
// and optionally example_bank.json and embeddings.tsv (precomputed dense
// vectors).
struct KnowledgeBase {
    ConceptStore store;  // synonyms already expanded
    ExampleBank bank;
    std::optional<std::vector<PrecomputedRow>> precomputed;
};

KnowledgeBase load_knowledge_base(const std::string& dir, const SynonymExpansionConfig& expansion = {});

// Builds the retrieval index (from the precomputed vectors when present) and
// embeds the example bank with the same provider.
RetrievalIndex index_knowledge_base(KnowledgeBase& kb, std::shared_ptr<EmbeddingProvider> provider);

}  // namespace cdemap
