#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/embedding.hpp"
#include "cdemap/llm.hpp"

namespace cdemap {

enum class Scale { continuous, nominal, ordinal };

std::string_view scale_name(Scale s);
std::optional<Scale> parse_scale(std::string_view s);

struct EntryMetadata {
    std::optional<std::string> data_type;
    std::optional<Scale> scale;
    std::optional<std::string> unit;
    std::optional<std::string> formula;
    std::optional<std::string> visit;
    std::vector<std::string> categories;

    bool empty() const {
        return !data_type && !scale && !unit && !formula && !visit && categories.empty();
    }
    bool operator==(const EntryMetadata&) const = default;
};

// One variable of a source data dictionary. Only the label is mandatory.
struct DataDictionaryEntry {
    std::string name;
    std::string label;
    EntryMetadata metadata;

    bool operator==(const DataDictionaryEntry&) const = default;
};

struct DecomposedQuery {
    std::string refined_query;
    std::string base_entity;
    std::vector<std::string> associated_entities;
    std::vector<std::string> categories;
    std::optional<std::string> unit;
    std::optional<std::string> visit;
    std::optional<std::string> method;
    std::optional<std::string> formula;
    std::optional<std::string> domain_hint;

    bool operator==(const DecomposedQuery&) const = default;
};

// Throws InvalidEntry describing the first violated invariant.
void check_decomposition(const DecomposedQuery& q);

// Record formats (see docs/formats.md). Absent optionals are omitted.
nlohmann::ordered_json entry_to_json(const DataDictionaryEntry& e);
DataDictionaryEntry entry_from_json(const nlohmann::json& j);
nlohmann::ordered_json decomposition_to_json(const DecomposedQuery& q);
DecomposedQuery decomposition_from_json(const nlohmann::json& j);

// Data-dictionary files: CSV `name,label,data_type,scale,unit,formula,visit,categories`
// (categories pipe-separated) or a JSON array of entry records.
std::vector<DataDictionaryEntry> load_dictionary(const std::string& path);
std::vector<DataDictionaryEntry> load_dictionary_csv(const std::string& path);
std::vector<DataDictionaryEntry> load_dictionary_json(const std::string& path);
std::vector<DataDictionaryEntry> dictionary_from_json(const nlohmann::json& j);
void write_dictionary_csv(const std::string& path, const std::vector<DataDictionaryEntry>& entries);
void write_dictionary_json(const std::string& path, const std::vector<DataDictionaryEntry>& entries);

// Trims/squashes every string field, drops empty optionals, de-duplicates
// categories keeping first occurrences. Throws InvalidEntry on empty label.
DataDictionaryEntry validate_input(const DataDictionaryEntry& entry);

struct DecompositionExample {
    DataDictionaryEntry input;
    DecomposedQuery output;
};

class ExampleBank {
public:
    ExampleBank() = default;
    explicit ExampleBank(std::vector<DecompositionExample> examples);

    static ExampleBank from_file(const std::string& path);
    static ExampleBank from_json(const nlohmann::json& j);

    // Embeds each example's label. Must use the retrieval provider.
    void embed(EmbeddingProvider& provider);

    const std::vector<DecompositionExample>& examples() const { return examples_; }
    const std::vector<DenseVector>& embeddings() const { return embeddings_; }
    std::size_t size() const { return examples_.size(); }

private:
    std::vector<DecompositionExample> examples_;
    std::vector<DenseVector> embeddings_;
};

inline constexpr std::size_t kDefaultExampleCount = 3;

// The m examples nearest to the entry label by cosine similarity; ties keep
// bank order. The bank must have been embedded with `provider`.
std::vector<DecompositionExample> select_examples(const DataDictionaryEntry& entry, const ExampleBank& bank,
                                                  std::size_t m, EmbeddingProvider& provider);

std::string serialize_entry(const DataDictionaryEntry& entry);

std::string build_decomposition_prompt(const DataDictionaryEntry& entry,
                                       const std::vector<DecompositionExample>& examples,
                                       const std::string& rules_text);

// Parses a structured completion. Throws DecompositionFailure with a reason
// suitable for the repair message.
DecomposedQuery parse_decomposition(const std::string& completion, const DataDictionaryEntry& entry);

// "0=No" -> "No"; "9: Missing" -> "Missing"; other labels unchanged.
std::string strip_category_code(std::string_view category);

// Labels of at most this many words with empty metadata skip the LLM.
inline constexpr std::size_t kBareTermMaxWords = 2;
inline constexpr int kDecompositionMaxAttempts = 3;

bool is_bare_term(const DataDictionaryEntry& entry);

struct DecomposeOptions {
    std::size_t example_count = kDefaultExampleCount;
    std::string rules_text;
    std::uint64_t seed = 0;
};

struct DecompositionResult {
    DecomposedQuery query;
    int attempts = 0;  // provider calls made; 0 for bypassed entries
    bool bypassed = false;
};

// Decomposes a validated entry. Calls the provider at temperature 0, retrying
// malformed completions up to twice with a repair instruction. Throws
// DecompositionFailure when attempts run out or the provider fails.
DecompositionResult decompose(const DataDictionaryEntry& entry, LLMProvider& llm, const ExampleBank& bank,
                              EmbeddingProvider& embedder, const DecomposeOptions& options = {});

}  // namespace cdemap
