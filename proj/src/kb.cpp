#include "cdemap/kb.hpp"

#include <filesystem>

#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"

namespace cdemap {

namespace fs = std::filesystem;

KnowledgeBase load_knowledge_base(const std::string& dir, const SynonymExpansionConfig& expansion) {
    fs::path root(dir);
    if (!fs::is_directory(root)) throw IoError("knowledge base directory not found: " + dir);
    KnowledgeBase kb;
    kb.store = expand_synonyms(load_vocabulary((root / "concepts.csv").string(), (root / "synonyms.csv").string(),
                                               (root / "relationships.csv").string()),
                               expansion);
    if (fs::exists(root / "example_bank.json")) kb.bank = ExampleBank::from_file((root / "example_bank.json").string());
    if (fs::exists(root / "embeddings.tsv")) kb.precomputed = read_precomputed((root / "embeddings.tsv").string());
    spdlog::info("knowledge base {}: {} concepts, {} examples{}", dir, kb.store.size(), kb.bank.size(),
                 kb.precomputed ? ", precomputed embeddings" : "");
    return kb;
}

RetrievalIndex index_knowledge_base(KnowledgeBase& kb, std::shared_ptr<EmbeddingProvider> provider) {
    kb.bank.embed(*provider);
    if (kb.precomputed) return RetrievalIndex::from_precomputed(kb.store, *kb.precomputed, std::move(provider));
    return RetrievalIndex::build(kb.store, std::move(provider));
}

}  // namespace cdemap
