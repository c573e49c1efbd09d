#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cdemap {

struct DenseVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    bool all_zero() const;
    bool operator==(const DenseVector&) const = default;
};

// Sorted by term id, weights strictly positive.
struct SparseVector {
    std::vector<std::pair<std::uint32_t, double>> entries;

    static SparseVector from_unsorted(std::vector<std::pair<std::uint32_t, double>> entries);
    bool operator==(const SparseVector&) const = default;
};

double cosine(const DenseVector& a, const DenseVector& b);
double dot(const SparseVector& a, const SparseVector& b);
double norm(const DenseVector& v);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual DenseVector embed_dense(std::string_view text) = 0;
    virtual SparseVector embed_sparse(std::string_view text) = 0;
    virtual std::string provider_name() const = 0;
};

// Offline deterministic provider. Dense: counts of character 3-grams of the
// normalized text (padded with one space each side), hashed into 256
// buckets, L2-normalized. Sparse: counts of normalized tokens keyed by
// 32-bit FNV-1a of the token. All weights are non-negative, so cosine
// similarity between any two outputs lies in [0, 1].
class HashingEmbeddingProvider final : public EmbeddingProvider {
public:
    static constexpr std::size_t kBuckets = 256;

    DenseVector embed_dense(std::string_view text) override;
    SparseVector embed_sparse(std::string_view text) override;
    std::string provider_name() const override { return "hashing-3gram-256"; }
};

}  // namespace cdemap
