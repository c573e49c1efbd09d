#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cdemap/embedding.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

enum class RetrievalSource { dense, sparse };

struct Candidate {
    OmopId omop_id = 0;
    std::string matched_surface;
    std::optional<double> dense_score;
    std::optional<double> sparse_score;
    std::optional<std::size_t> dense_rank;   // 1-based
    std::optional<std::size_t> sparse_rank;  // 1-based
    double fused_score = 0.0;
    std::set<RetrievalSource> sources;

    bool operator==(const Candidate&) const = default;
};

inline constexpr double kFusionRankOffset = 60.0;
inline constexpr std::size_t kDefaultTopK = 10;

// Retrieval scores are rounded to this resolution before ranking so that
// mathematically equal scores tie exactly and fall back to omop_id order
// regardless of floating-point summation order.
inline constexpr double kScoreResolution = 1e-12;
double quantize_score(double s);

// Text embedded for one surface form: `surface | semantic_type | p1; p2`,
// empty fields omitted, parents in ascending omop_id order.
std::string info_text(const ConceptStore& store, const Concept& cpt, std::string_view surface);

struct PrecomputedRow {
    OmopId omop_id = 0;
    std::string surface;
    DenseVector vector;
};

// `dim=<n>` header then `omop_id<TAB>surface<TAB>v1,...,vn` rows.
std::vector<PrecomputedRow> read_precomputed(const std::string& path);
void write_precomputed(const std::string& path, const std::vector<PrecomputedRow>& rows);

// Exact dense + sparse search spaces over every surface form of a store.
// Immutable once built; queries may run concurrently provided the embedding
// provider tolerates concurrent calls.
class RetrievalIndex {
public:
    struct Entry {
        OmopId omop_id = 0;
        std::string surface;
        DenseVector dense;
        double dense_norm = 0.0;
        SparseVector sparse;
    };

    static RetrievalIndex build(const ConceptStore& store, std::shared_ptr<EmbeddingProvider> provider);

    // Dense vectors come from `rows`; sparse postings and query embeddings
    // still go through `provider`.
    static RetrievalIndex from_precomputed(const ConceptStore& store, const std::vector<PrecomputedRow>& rows,
                                           std::shared_ptr<EmbeddingProvider> provider);

    std::vector<Candidate> retrieve_dense(std::string_view query_text, std::size_t k) const;
    std::vector<Candidate> retrieve_sparse(std::string_view query_text, std::size_t k) const;
    std::vector<Candidate> merge_retrieve(std::string_view query_text, std::size_t k = kDefaultTopK) const;

    std::vector<Candidate> rank_dense(const DenseVector& query, std::size_t k) const;
    std::vector<Candidate> rank_sparse(const SparseVector& query, std::size_t k) const;

    std::vector<PrecomputedRow> dense_rows() const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t dim() const { return dim_; }
    EmbeddingProvider& provider() const { return *provider_; }

private:
    std::vector<Entry> entries_;
    std::size_t dim_ = 0;
    std::shared_ptr<EmbeddingProvider> provider_;
};

// Reciprocal-rank fusion of two ranked lists: each concept scores
// sum over lists of 1 / (60 + rank). Ordered by fused score descending,
// then omop_id ascending. Ranks are taken from list positions.
std::vector<Candidate> fuse_rankings(const std::vector<Candidate>& dense, const std::vector<Candidate>& sparse);

}  // namespace cdemap
