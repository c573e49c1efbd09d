#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/llm.hpp"
#include "cdemap/reranker.hpp"
#include "cdemap/vocab_store.hpp"

namespace cdemap {

enum class Judgement { correct, partially_correct, incorrect };
enum class ReviewStatus { pending, approved, rejected, modified };

std::string_view judgement_name(Judgement j);
std::string_view status_name(ReviewStatus s);
std::optional<Judgement> parse_judgement_name(std::string_view s);
std::optional<ReviewStatus> parse_status_name(std::string_view s);

// Component roles used for composite entries; empty for plain entries.
namespace roles {
inline constexpr std::string_view base = "base";
inline constexpr std::string_view unit = "unit";
inline constexpr std::string_view category = "category";
inline constexpr std::string_view visit = "visit";
inline constexpr std::string_view associated = "associated";
}  // namespace roles

struct ConceptRef {
    std::string concept_code;
    OmopId omop_id = 0;
    std::string role;

    bool operator==(const ConceptRef&) const = default;
};

using ReviewId = std::uint64_t;
using Millis = std::int64_t;

struct ReservoirEntry {
    ReviewId review_id = 0;
    std::string label;
    std::string key;  // normalized label
    std::vector<ConceptRef> concepts;
    Judgement judgement = Judgement::incorrect;
    ReviewStatus review_status = ReviewStatus::pending;
    std::optional<std::string> reviewer;
    Millis created_at = 0;
    std::optional<Millis> decided_at;
    // Opaque audit payload shown to reviewers (query, decomposition, ranked
    // candidates). Persisted verbatim.
    nlohmann::json context;

    bool servable() const {
        return review_status == ReviewStatus::approved || review_status == ReviewStatus::modified;
    }
    bool operator==(const ReservoirEntry&) const = default;
};

nlohmann::ordered_json entry_record(const ReservoirEntry& e);

struct Triple {
    std::string subject;
    std::string predicate;
    std::string object;

    bool operator==(const Triple&) const = default;
};

// Percent-encodes characters not allowed inside an IRI reference.
std::string iri_escape(std::string_view s);
// `<s> <p> <o> .`
std::string format_triple(const Triple& t);

struct ReviewDecision {
    enum class Kind { approve, reject, modify };
    Kind kind = Kind::approve;
    std::vector<ConceptRef> concepts;  // modify only

    static ReviewDecision approve() { return {Kind::approve, {}}; }
    static ReviewDecision reject() { return {Kind::reject, {}}; }
    static ReviewDecision modify(std::vector<ConceptRef> concepts) { return {Kind::modify, std::move(concepts)}; }
};

std::optional<ReviewDecision::Kind> parse_decision_kind(std::string_view s);

// Zero-shot judge prompt for a proposed mapping.
std::string build_judge_prompt(std::string_view label, const std::vector<const Concept*>& concepts);
// Unrecognized text maps to incorrect.
Judgement parse_judgement(std::string_view completion);

Judgement judge(std::string_view label, const std::vector<const Concept*>& concepts, LLMProvider& provider);
// Precondition: decision is not NA.
Judgement judge(std::string_view label, const MatchDecision& decision, const ConceptStore& store,
                LLMProvider& provider);

// Validated label->concept cache with a human review queue.
//
// Writes are serialized through one mutex; every commit publishes a fresh
// immutable snapshot that readers load without taking the write lock. When
// opened on a path, every state change is appended to a JSON-lines record
// log before it is published (format in docs/formats.md); open() replays and
// compacts the log.
class Reservoir {
public:
    using Clock = std::function<Millis()>;

    struct State {
        std::map<ReviewId, ReservoirEntry> entries;
        std::unordered_map<std::string, ReviewId> servable_by_key;
        ReviewId next_id = 1;
    };

    explicit Reservoir(const ConceptStore* store = nullptr, Clock clock = {});
    ~Reservoir();
    Reservoir(const Reservoir&) = delete;
    Reservoir& operator=(const Reservoir&) = delete;

    static std::unique_ptr<Reservoir> open(const std::string& path, const ConceptStore* store = nullptr,
                                           Clock clock = {});

    // Servable entry for the normalized label, if any.
    std::optional<ReservoirEntry> lookup(std::string_view label) const;

    // Gate: incorrect judgements are discarded (returns nullopt). A pending
    // entry with the same label key and omop_id set is reused.
    std::optional<ReviewId> enqueue(std::string_view label, std::vector<ConceptRef> concepts, Judgement judgement,
                                    nlohmann::json context = nullptr);

    // pending -> approved | rejected | modified. Throws UnknownReview,
    // NotPending, or InvalidConcept.
    ReservoirEntry apply_decision(ReviewId id, const ReviewDecision& decision, const std::string& reviewer);

    std::optional<ReservoirEntry> get(ReviewId id) const;
    // Pending entries ordered by created_at then id; page is 1-based.
    std::vector<ReservoirEntry> list_pending(std::size_t page, std::size_t page_size) const;
    std::size_t pending_count() const;
    std::vector<ReservoirEntry> entries() const;

    std::shared_ptr<const State> snapshot() const;
    const std::string& path() const { return path_; }

private:
    void commit(std::shared_ptr<State> next, const nlohmann::ordered_json& record);
    void append_record(const nlohmann::ordered_json& record);
    Millis now() const;

    const ConceptStore* store_;
    Clock clock_;
    std::mutex write_mu_;
    std::shared_ptr<const State> state_;
    std::string path_;
    std::FILE* log_ = nullptr;
};

std::vector<Triple> export_triples(const ReservoirEntry& entry);
std::vector<Triple> export_triples(const Reservoir& reservoir);
nlohmann::ordered_json export_dictionary(const Reservoir& reservoir);
void export_dictionary(const Reservoir& reservoir, const std::string& path);
void export_triples(const Reservoir& reservoir, const std::string& path);

}  // namespace cdemap
