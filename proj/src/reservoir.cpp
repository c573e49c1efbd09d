#include "cdemap/reservoir.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view judgement_name(Judgement j) {
    switch (j) {
        case Judgement::correct: return "correct";
        case Judgement::partially_correct: return "partially_correct";
        case Judgement::incorrect: return "incorrect";
    }
    return "incorrect";
}

std::string_view status_name(ReviewStatus s) {
    switch (s) {
        case ReviewStatus::pending: return "pending";
        case ReviewStatus::approved: return "approved";
        case ReviewStatus::rejected: return "rejected";
        case ReviewStatus::modified: return "modified";
    }
    return "pending";
}

std::optional<Judgement> parse_judgement_name(std::string_view s) {
    for (auto j : {Judgement::correct, Judgement::partially_correct, Judgement::incorrect})
        if (judgement_name(j) == s) return j;
    return std::nullopt;
}

std::optional<ReviewStatus> parse_status_name(std::string_view s) {
    for (auto st : {ReviewStatus::pending, ReviewStatus::approved, ReviewStatus::rejected, ReviewStatus::modified})
        if (status_name(st) == s) return st;
    return std::nullopt;
}

std::optional<ReviewDecision::Kind> parse_decision_kind(std::string_view s) {
    std::string k = text::normalize_surface(s);
    if (k == "approve") return ReviewDecision::Kind::approve;
    if (k == "reject") return ReviewDecision::Kind::reject;
    if (k == "modify") return ReviewDecision::Kind::modify;
    return std::nullopt;
}

namespace {

ordered_json concepts_json(const std::vector<ConceptRef>& concepts) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : concepts) {
        ordered_json o;
        o["code"] = c.concept_code;
        o["omop_id"] = c.omop_id;
        if (!c.role.empty()) o["role"] = c.role;
        arr.push_back(std::move(o));
    }
    return arr;
}

std::vector<ConceptRef> concepts_from_json(const json& arr) {
    std::vector<ConceptRef> out;
    for (const auto& o : arr)
        out.push_back({o.value("code", std::string()), o.at("omop_id").get<OmopId>(), o.value("role", std::string())});
    return out;
}

std::set<OmopId> id_set(const std::vector<ConceptRef>& concepts) {
    std::set<OmopId> s;
    for (const auto& c : concepts) s.insert(c.omop_id);
    return s;
}

ordered_json enqueue_record(const ReservoirEntry& e) {
    ordered_json r;
    r["op"] = "enqueue";
    r["review_id"] = e.review_id;
    r["label"] = e.label;
    r["concepts"] = concepts_json(e.concepts);
    r["judgement"] = judgement_name(e.judgement);
    r["created_at"] = e.created_at;
    if (!e.context.is_null()) r["context"] = e.context;
    return r;
}

ordered_json decide_record(const ReservoirEntry& e) {
    ordered_json r;
    r["op"] = "decide";
    r["review_id"] = e.review_id;
    r["status"] = status_name(e.review_status);
    r["reviewer"] = e.reviewer.value_or("");
    r["decided_at"] = e.decided_at.value_or(0);
    if (e.review_status == ReviewStatus::modified) r["concepts"] = concepts_json(e.concepts);
    return r;
}

// Applies one log record; throws MalformedRow on any inconsistency.
void replay(Reservoir::State& st, const json& r) {
    std::string op = r.at("op").get<std::string>();
    ReviewId id = r.at("review_id").get<ReviewId>();
    if (op == "enqueue") {
        if (st.entries.count(id)) throw MalformedRow("duplicate enqueue for review " + std::to_string(id));
        ReservoirEntry e;
        e.review_id = id;
        e.label = r.at("label").get<std::string>();
        e.key = text::normalize_surface(e.label);
        e.concepts = concepts_from_json(r.at("concepts"));
        auto j = parse_judgement_name(r.at("judgement").get<std::string>());
        if (!j) throw MalformedRow("unknown judgement");
        e.judgement = *j;
        e.created_at = r.at("created_at").get<Millis>();
        if (r.contains("context")) e.context = r.at("context");
        st.entries.emplace(id, std::move(e));
        st.next_id = std::max(st.next_id, id + 1);
    } else if (op == "decide") {
        auto it = st.entries.find(id);
        if (it == st.entries.end()) throw MalformedRow("decision for unknown review " + std::to_string(id));
        auto& e = it->second;
        if (e.review_status != ReviewStatus::pending) throw MalformedRow("second decision for review " + std::to_string(id));
        auto s = parse_status_name(r.at("status").get<std::string>());
        if (!s || *s == ReviewStatus::pending) throw MalformedRow("bad status in decision");
        e.review_status = *s;
        e.reviewer = r.at("reviewer").get<std::string>();
        e.decided_at = r.at("decided_at").get<Millis>();
        if (*s == ReviewStatus::modified) e.concepts = concepts_from_json(r.at("concepts"));
        if (e.servable()) st.servable_by_key[e.key] = id;
    } else {
        throw MalformedRow("unknown op '" + op + "'");
    }
}

}  // namespace

ordered_json entry_record(const ReservoirEntry& e) {
    ordered_json r;
    r["review_id"] = e.review_id;
    r["label"] = e.label;
    r["concepts"] = concepts_json(e.concepts);
    r["judgement"] = judgement_name(e.judgement);
    r["review_status"] = status_name(e.review_status);
    if (e.reviewer) r["reviewer"] = *e.reviewer;
    r["created_at"] = e.created_at;
    if (e.decided_at) r["decided_at"] = *e.decided_at;
    if (!e.context.is_null()) r["context"] = e.context;
    return r;
}

std::string iri_escape(std::string_view s) {
    static const std::string_view forbidden = " <>\"{}|\\^`%";
    std::string out;
    char buf[4];
    for (unsigned char c : s) {
        if (c < 0x21 || c == 0x7F || forbidden.find(static_cast<char>(c)) != std::string_view::npos) {
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        } else {
            out.push_back(static_cast<char>(c));
        }
    }
    return out;
}

std::string format_triple(const Triple& t) {
    return "<" + iri_escape(t.subject) + "> <" + iri_escape(t.predicate) + "> <" + iri_escape(t.object) + "> .";
}

std::string build_judge_prompt(std::string_view label, const std::vector<const Concept*>& concepts) {
    std::string p =
        "### Task\n"
        "Decide whether the proposed concept mapping for the clinical label is correct, partially correct, "
        "or incorrect. Answer with exactly one of: correct, partially correct, incorrect.\n"
        "\n### Label\n";
    p.append(label);
    p += "\n\n### Proposed concepts\n";
    for (const Concept* c : concepts)
        p += "- " + c->name + " (" + c->vocabulary + " " + c->code + ", omop_id " + std::to_string(c->omop_id) + ")\n";
    return p;
}

Judgement parse_judgement(std::string_view completion) {
    std::string s = text::normalize_surface(completion);
    for (char& c : s)
        if (c == '_' || c == '-') c = ' ';
    if (text::contains(s, "partially correct")) return Judgement::partially_correct;
    if (text::contains(s, "incorrect")) return Judgement::incorrect;
    for (const auto& tok : text::tokenize(s))
        if (tok == "correct") return Judgement::correct;
    return Judgement::incorrect;
}

Judgement judge(std::string_view label, const std::vector<const Concept*>& concepts, LLMProvider& provider) {
    return parse_judgement(provider.complete(build_judge_prompt(label, concepts), 0.0, 0));
}

Judgement judge(std::string_view label, const MatchDecision& decision, const ConceptStore& store,
                LLMProvider& provider) {
    if (decision.is_na()) throw InvalidEntry("cannot judge an NA decision");
    return judge(label, {&store.get_concept(decision.selected->candidate.omop_id)}, provider);
}

Reservoir::Reservoir(const ConceptStore* store, Clock clock)
    : store_(store), clock_(std::move(clock)), state_(std::make_shared<State>()) {}

Reservoir::~Reservoir() {
    if (log_) std::fclose(log_);
}

Millis Reservoir::now() const {
    if (clock_) return clock_();
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::unique_ptr<Reservoir> Reservoir::open(const std::string& path, const ConceptStore* store, Clock clock) {
    auto res = std::make_unique<Reservoir>(store, std::move(clock));
    auto st = std::make_shared<State>();
    if (std::filesystem::exists(path)) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        std::string line;
        std::size_t lineno = 0;
        std::vector<std::string> lines;
        while (std::getline(in, line)) lines.push_back(line);
        bool complete_tail = true;
        {
            std::ifstream tail(path, std::ios::binary | std::ios::ate);
            auto size = static_cast<std::streamoff>(tail.tellg());
            if (size > 0) {
                tail.seekg(size - 1);
                complete_tail = tail.get() == '\n';
            }
        }
        for (std::size_t i = 0; i < lines.size(); ++i) {
            lineno = i + 1;
            if (text::trim(lines[i]).empty()) continue;
            bool last = i + 1 == lines.size();
            try {
                replay(*st, json::parse(lines[i]));
            } catch (const std::exception& e) {
                // A torn final write (no trailing newline) is dropped.
                if (last && !complete_tail) {
                    spdlog::warn("reservoir {}: dropping incomplete final record", path);
                    break;
                }
                throw MalformedRow(path + " line " + std::to_string(lineno) + ": " + e.what());
            }
        }
    }
    for (const auto& [id, e] : st->entries)
        if (store)
            for (const auto& c : e.concepts)
                if (!store->contains(c.omop_id))
                    spdlog::warn("reservoir {}: review {} refers to omop_id {} missing from the store", path, id,
                                 c.omop_id);

    // Compact: rewrite as one enqueue (+ one decide) per entry, then append.
    std::string tmp = path + ".compact";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        for (const auto& [id, e] : st->entries) {
            out << enqueue_record(e).dump() << '\n';
            if (e.review_status != ReviewStatus::pending) out << decide_record(e).dump() << '\n';
        }
        out.flush();
        if (!out) throw IoError("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
    res->log_ = std::fopen(path.c_str(), "ab");
    if (!res->log_) throw IoError("cannot append to " + path);
    res->path_ = path;
    res->state_ = std::move(st);
    return res;
}

std::shared_ptr<const Reservoir::State> Reservoir::snapshot() const { return std::atomic_load(&state_); }

void Reservoir::append_record(const ordered_json& record) {
    if (!log_) return;
    std::string line = record.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0)
        throw IoError("cannot append to reservoir log " + path_);
}

void Reservoir::commit(std::shared_ptr<State> next, const ordered_json& record) {
    append_record(record);
    std::atomic_store(&state_, std::shared_ptr<const State>(std::move(next)));
}

std::optional<ReservoirEntry> Reservoir::lookup(std::string_view label) const {
    auto st = snapshot();
    auto it = st->servable_by_key.find(text::normalize_surface(label));
    if (it == st->servable_by_key.end()) return std::nullopt;
    return st->entries.at(it->second);
}

std::optional<ReviewId> Reservoir::enqueue(std::string_view label, std::vector<ConceptRef> concepts,
                                           Judgement judgement, json context) {
    if (judgement == Judgement::incorrect) {
        spdlog::info("reservoir: discarding mapping for '{}' judged incorrect", label);
        return std::nullopt;
    }
    std::string key = text::normalize_surface(label);
    if (key.empty()) throw InvalidEntry("reservoir label must not be empty");
    if (concepts.empty()) throw InvalidConcept("reservoir entry needs at least one concept");
    if (store_)
        for (auto& c : concepts) {
            const Concept* cpt = store_->find(c.omop_id);
            if (!cpt) throw InvalidConcept("omop_id " + std::to_string(c.omop_id) + " not in the store");
            if (c.concept_code.empty()) c.concept_code = cpt->code;
        }

    std::lock_guard lock(write_mu_);
    auto current = snapshot();
    auto ids = id_set(concepts);
    for (const auto& [id, e] : current->entries)
        if (e.review_status == ReviewStatus::pending && e.key == key && id_set(e.concepts) == ids) return id;

    auto next = std::make_shared<State>(*current);
    ReservoirEntry e;
    e.review_id = next->next_id++;
    e.label = text::squash_whitespace(label);
    e.key = std::move(key);
    e.concepts = std::move(concepts);
    e.judgement = judgement;
    e.created_at = now();
    e.context = std::move(context);
    ReviewId id = e.review_id;
    auto record = enqueue_record(e);
    next->entries.emplace(id, std::move(e));
    commit(std::move(next), record);
    return id;
}

ReservoirEntry Reservoir::apply_decision(ReviewId id, const ReviewDecision& decision, const std::string& reviewer) {
    std::lock_guard lock(write_mu_);
    auto current = snapshot();
    auto it = current->entries.find(id);
    if (it == current->entries.end()) throw UnknownReview("no review with id " + std::to_string(id));
    if (it->second.review_status != ReviewStatus::pending)
        throw NotPending("review " + std::to_string(id) + " is already " +
                         std::string(status_name(it->second.review_status)));

    std::vector<ConceptRef> replacement;
    if (decision.kind == ReviewDecision::Kind::modify) {
        if (decision.concepts.empty()) throw InvalidConcept("modify needs at least one concept");
        replacement = decision.concepts;
        for (auto& c : replacement) {
            const Concept* cpt = store_ ? store_->find(c.omop_id) : nullptr;
            if (store_ && !cpt) throw InvalidConcept("omop_id " + std::to_string(c.omop_id) + " not in the store");
            if (cpt && c.concept_code.empty()) c.concept_code = cpt->code;
        }
    }

    auto next = std::make_shared<State>(*current);
    ReservoirEntry& e = next->entries.at(id);
    switch (decision.kind) {
        case ReviewDecision::Kind::approve: e.review_status = ReviewStatus::approved; break;
        case ReviewDecision::Kind::reject: e.review_status = ReviewStatus::rejected; break;
        case ReviewDecision::Kind::modify:
            e.review_status = ReviewStatus::modified;
            e.concepts = std::move(replacement);
            break;
    }
    e.reviewer = reviewer;
    e.decided_at = now();
    if (e.servable()) next->servable_by_key[e.key] = id;
    ReservoirEntry out = e;
    commit(std::move(next), decide_record(out));
    return out;
}

std::optional<ReservoirEntry> Reservoir::get(ReviewId id) const {
    auto st = snapshot();
    auto it = st->entries.find(id);
    if (it == st->entries.end()) return std::nullopt;
    return it->second;
}

std::vector<ReservoirEntry> Reservoir::list_pending(std::size_t page, std::size_t page_size) const {
    auto st = snapshot();
    std::vector<const ReservoirEntry*> pending;
    for (const auto& [id, e] : st->entries)
        if (e.review_status == ReviewStatus::pending) pending.push_back(&e);
    std::stable_sort(pending.begin(), pending.end(), [](const ReservoirEntry* a, const ReservoirEntry* b) {
        if (a->created_at != b->created_at) return a->created_at < b->created_at;
        return a->review_id < b->review_id;
    });
    std::vector<ReservoirEntry> out;
    if (page == 0 || page_size == 0) return out;
    std::size_t start = (page - 1) * page_size;
    for (std::size_t i = start; i < pending.size() && i < start + page_size; ++i) out.push_back(*pending[i]);
    return out;
}

std::size_t Reservoir::pending_count() const {
    auto st = snapshot();
    return static_cast<std::size_t>(std::count_if(st->entries.begin(), st->entries.end(), [](const auto& kv) {
        return kv.second.review_status == ReviewStatus::pending;
    }));
}

std::vector<ReservoirEntry> Reservoir::entries() const {
    auto st = snapshot();
    std::vector<ReservoirEntry> out;
    for (const auto& [id, e] : st->entries) out.push_back(e);
    return out;
}

std::vector<Triple> export_triples(const ReservoirEntry& entry) {
    std::vector<Triple> out;
    if (!entry.servable()) return out;
    for (const auto& c : entry.concepts) {
        out.push_back({entry.label, "mapsTo", std::to_string(c.omop_id)});
        out.push_back({std::to_string(c.omop_id), "hasCode", c.concept_code});
    }
    auto base = std::find_if(entry.concepts.begin(), entry.concepts.end(),
                             [](const ConceptRef& c) { return c.role == roles::base; });
    if (base == entry.concepts.end()) return out;
    for (const auto& c : entry.concepts) {
        if (&c == &*base || c.role.empty()) continue;
        std::string predicate = c.role == roles::unit       ? "hasUnit"
                                : c.role == roles::category ? "hasCategory"
                                : c.role == roles::visit    ? "hasVisit"
                                                            : "associatedWith";
        out.push_back({std::to_string(base->omop_id), predicate, std::to_string(c.omop_id)});
    }
    return out;
}

namespace {

std::vector<const ReservoirEntry*> servable_entries(const Reservoir::State& st) {
    std::vector<const ReservoirEntry*> out;
    for (const auto& [key, id] : st.servable_by_key) out.push_back(&st.entries.at(id));
    std::sort(out.begin(), out.end(), [](const ReservoirEntry* a, const ReservoirEntry* b) { return a->key < b->key; });
    return out;
}

}  // namespace

std::vector<Triple> export_triples(const Reservoir& reservoir) {
    auto st = reservoir.snapshot();
    std::vector<Triple> out;
    for (const auto* e : servable_entries(*st)) {
        auto t = export_triples(*e);
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

ordered_json export_dictionary(const Reservoir& reservoir) {
    auto st = reservoir.snapshot();
    ordered_json arr = ordered_json::array();
    for (const auto* e : servable_entries(*st)) {
        ordered_json rec;
        rec["label"] = e->label;
        ordered_json concepts = ordered_json::array();
        for (const auto& c : e->concepts) concepts.push_back({{"code", c.concept_code}, {"omop_id", c.omop_id}});
        rec["concepts"] = std::move(concepts);
        arr.push_back(std::move(rec));
    }
    return arr;
}

void export_dictionary(const Reservoir& reservoir, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << export_dictionary(reservoir).dump(2) << '\n';
}

void export_triples(const Reservoir& reservoir, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& t : export_triples(reservoir)) out << format_triple(t) << '\n';
}

}  // namespace cdemap
