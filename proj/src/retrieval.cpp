#include "cdemap/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

std::string info_text(const ConceptStore& store, const Concept& cpt, std::string_view surface) {
    std::string out(surface);
    if (!cpt.semantic_type.empty()) out += " | " + cpt.semantic_type;
    std::vector<std::string> parents;
    for (OmopId p : cpt.parents)
        if (const Concept* pc = store.find(p)) parents.push_back(pc->name);
    if (!parents.empty()) out += " | " + text::join(parents, "; ");
    return out;
}

double quantize_score(double s) { return std::round(s / kScoreResolution) * kScoreResolution; }

namespace {

struct Scored {
    std::size_t entry;
    double score;
};

// Best surface per concept, then top-k by score desc / omop_id asc.
std::vector<Candidate> top_k_by_concept(const std::vector<RetrievalIndex::Entry>& entries,
                                        const std::vector<Scored>& scored, std::size_t k,
                                        RetrievalSource source) {
    std::unordered_map<OmopId, Scored> best;
    for (const auto& s : scored) {
        OmopId id = entries[s.entry].omop_id;
        auto it = best.find(id);
        if (it == best.end()) {
            best.emplace(id, s);
        } else if (s.score > it->second.score ||
                   (s.score == it->second.score && entries[s.entry].surface < entries[it->second.entry].surface)) {
            it->second = s;
        }
    }
    std::vector<Scored> ranked;
    ranked.reserve(best.size());
    for (const auto& [id, s] : best) ranked.push_back(s);
    auto cmp = [&](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return entries[a.entry].omop_id < entries[b.entry].omop_id;
    };
    std::size_t n = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), ranked.end(), cmp);
    ranked.resize(n);

    std::vector<Candidate> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = entries[ranked[i].entry];
        Candidate c;
        c.omop_id = e.omop_id;
        c.matched_surface = e.surface;
        if (source == RetrievalSource::dense) {
            c.dense_score = ranked[i].score;
            c.dense_rank = i + 1;
        } else {
            c.sparse_score = ranked[i].score;
            c.sparse_rank = i + 1;
        }
        c.fused_score = 1.0 / (kFusionRankOffset + static_cast<double>(i + 1));
        c.sources.insert(source);
        out.push_back(std::move(c));
    }
    return out;
}

void check_k(std::size_t k) {
    if (k < 1) throw OutOfRange("retrieval k must be >= 1");
}

}  // namespace

RetrievalIndex RetrievalIndex::build(const ConceptStore& store, std::shared_ptr<EmbeddingProvider> provider) {
    RetrievalIndex index;
    index.provider_ = std::move(provider);
    for (const auto& c : store.concepts()) {
        for (const auto& surface : store.surface_forms(c)) {
            Entry e;
            e.omop_id = c.omop_id;
            e.surface = surface;
            std::string info = info_text(store, c, surface);
            try {
                e.dense = index.provider_->embed_dense(info);
                e.sparse = index.provider_->embed_sparse(surface);
            } catch (const ProviderFailure& err) {
                throw ProviderFailure("embedding surface '" + surface + "' (omop_id " + std::to_string(c.omop_id) +
                                      "): " + err.what());
            }
            if (index.entries_.empty()) index.dim_ = e.dense.dim();
            if (e.dense.dim() != index.dim_ || e.dense.dim() == 0)
                throw ProviderFailure("embedding surface '" + surface + "': dim " + std::to_string(e.dense.dim()) +
                                      " != index dim " + std::to_string(index.dim_));
            if (e.dense.all_zero()) throw ProviderFailure("embedding surface '" + surface + "': all-zero vector");
            e.dense_norm = norm(e.dense);
            index.entries_.push_back(std::move(e));
        }
    }
    return index;
}

RetrievalIndex RetrievalIndex::from_precomputed(const ConceptStore& store, const std::vector<PrecomputedRow>& rows,
                                                std::shared_ptr<EmbeddingProvider> provider) {
    RetrievalIndex index;
    index.provider_ = std::move(provider);
    for (const auto& row : rows) {
        if (!store.contains(row.omop_id))
            throw DanglingReference("precomputed embedding for unknown omop_id " + std::to_string(row.omop_id));
        Entry e;
        e.omop_id = row.omop_id;
        e.surface = row.surface;
        e.dense = row.vector;
        if (index.entries_.empty()) index.dim_ = e.dense.dim();
        if (e.dense.dim() != index.dim_)
            throw ProviderFailure("precomputed surface '" + row.surface + "': dim mismatch");
        e.dense_norm = norm(e.dense);
        e.sparse = index.provider_->embed_sparse(row.surface);
        index.entries_.push_back(std::move(e));
    }
    return index;
}

std::vector<Candidate> RetrievalIndex::rank_dense(const DenseVector& query, std::size_t k) const {
    check_k(k);
    double qn = norm(query);
    std::vector<Scored> scored;
    scored.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        double d = 0.0;
        if (query.dim() == e.dense.dim())
            for (std::size_t j = 0; j < query.dim(); ++j) d += query.values[j] * e.dense.values[j];
        double denom = qn * e.dense_norm;
        scored.push_back({i, denom == 0.0 ? 0.0 : quantize_score(d / denom)});
    }
    return top_k_by_concept(entries_, scored, k, RetrievalSource::dense);
}

std::vector<Candidate> RetrievalIndex::rank_sparse(const SparseVector& query, std::size_t k) const {
    check_k(k);
    std::vector<Scored> scored;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        double s = quantize_score(dot(query, entries_[i].sparse));
        if (s > 0.0) scored.push_back({i, s});
    }
    return top_k_by_concept(entries_, scored, k, RetrievalSource::sparse);
}

std::vector<Candidate> RetrievalIndex::retrieve_dense(std::string_view query_text, std::size_t k) const {
    check_k(k);
    if (entries_.empty()) return {};
    return rank_dense(provider_->embed_dense(query_text), k);
}

std::vector<Candidate> RetrievalIndex::retrieve_sparse(std::string_view query_text, std::size_t k) const {
    check_k(k);
    if (entries_.empty()) return {};
    return rank_sparse(provider_->embed_sparse(query_text), k);
}

std::vector<Candidate> RetrievalIndex::merge_retrieve(std::string_view query_text, std::size_t k) const {
    return fuse_rankings(retrieve_dense(query_text, k), retrieve_sparse(query_text, k));
}

std::vector<Candidate> fuse_rankings(const std::vector<Candidate>& dense, const std::vector<Candidate>& sparse) {
    std::map<OmopId, Candidate> merged;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        Candidate c = dense[i];
        c.sparse_score.reset();
        c.sparse_rank.reset();
        c.dense_rank = i + 1;
        c.sources = {RetrievalSource::dense};
        c.fused_score = 1.0 / (kFusionRankOffset + static_cast<double>(i + 1));
        merged.emplace(c.omop_id, std::move(c));
    }
    for (std::size_t i = 0; i < sparse.size(); ++i) {
        const Candidate& s = sparse[i];
        double contribution = 1.0 / (kFusionRankOffset + static_cast<double>(i + 1));
        auto it = merged.find(s.omop_id);
        if (it == merged.end()) {
            Candidate c = s;
            c.dense_score.reset();
            c.dense_rank.reset();
            c.sparse_rank = i + 1;
            c.sources = {RetrievalSource::sparse};
            c.fused_score = contribution;
            merged.emplace(c.omop_id, std::move(c));
        } else {
            it->second.sparse_score = s.sparse_score;
            it->second.sparse_rank = i + 1;
            it->second.sources.insert(RetrievalSource::sparse);
            it->second.fused_score += contribution;
        }
    }
    std::vector<Candidate> out;
    out.reserve(merged.size());
    for (auto& [id, c] : merged) out.push_back(std::move(c));
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.fused_score != b.fused_score) return a.fused_score > b.fused_score;
        return a.omop_id < b.omop_id;
    });
    return out;
}

std::vector<PrecomputedRow> RetrievalIndex::dense_rows() const {
    std::vector<PrecomputedRow> rows;
    rows.reserve(entries_.size());
    for (const auto& e : entries_) rows.push_back({e.omop_id, e.surface, e.dense});
    return rows;
}

std::vector<PrecomputedRow> read_precomputed(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) throw MalformedRow(path + ": line 1: expected dim=<n>");
    std::size_t dim = 0;
    {
        auto s = text::trim(line.substr(4));
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), dim);
        if (ec != std::errc{} || p != s.data() + s.size()) throw MalformedRow(path + ": line 1: bad dim");
    }
    std::vector<PrecomputedRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cols = text::split(line, '\t');
        std::string where = path + ": line " + std::to_string(lineno);
        if (cols.size() != 3) throw MalformedRow(where + ": expected 3 tab-separated columns");
        PrecomputedRow row;
        auto id = text::trim(cols[0]);
        auto [p, ec] = std::from_chars(id.data(), id.data() + id.size(), row.omop_id);
        if (ec != std::errc{} || p != id.data() + id.size()) throw MalformedRow(where + ": bad omop_id");
        row.surface = cols[1];
        for (const auto& v : text::split(cols[2], ',')) {
            try {
                std::size_t used = 0;
                row.vector.values.push_back(std::stod(v, &used));
                if (used != v.size()) throw std::invalid_argument(v);
            } catch (const std::exception&) {
                throw MalformedRow(where + ": bad vector component '" + v + "'");
            }
        }
        if (row.vector.dim() != dim) throw MalformedRow(where + ": vector has " + std::to_string(row.vector.dim()) +
                                                        " components, header says " + std::to_string(dim));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_precomputed(const std::string& path, const std::vector<PrecomputedRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "dim=" << (rows.empty() ? 0 : rows.front().vector.dim()) << '\n';
    char buf[32];
    for (const auto& r : rows) {
        out << r.omop_id << '\t' << r.surface << '\t';
        for (std::size_t i = 0; i < r.vector.dim(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", r.vector.values[i]);
            if (i) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace cdemap
