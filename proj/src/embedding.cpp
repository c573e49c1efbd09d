#include "cdemap/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cdemap/text.hpp"

namespace cdemap {

bool DenseVector::all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

SparseVector SparseVector::from_unsorted(std::vector<std::pair<std::uint32_t, double>> entries) {
    std::map<std::uint32_t, double> merged;
    for (const auto& [term, w] : entries) merged[term] += w;
    SparseVector out;
    for (const auto& [term, w] : merged)
        if (w > 0.0) out.entries.emplace_back(term, w);
    return out;
}

double norm(const DenseVector& v) {
    double s = 0.0;
    for (double x : v.values) s += x * x;
    return std::sqrt(s);
}

double cosine(const DenseVector& a, const DenseVector& b) {
    if (a.dim() != b.dim()) return 0.0;
    double d = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) d += a.values[i] * b.values[i];
    double n = norm(a) * norm(b);
    return n == 0.0 ? 0.0 : d / n;
}

double dot(const SparseVector& a, const SparseVector& b) {
    double s = 0.0;
    auto i = a.entries.begin();
    auto j = b.entries.begin();
    while (i != a.entries.end() && j != b.entries.end()) {
        if (i->first < j->first) {
            ++i;
        } else if (j->first < i->first) {
            ++j;
        } else {
            s += i->second * j->second;
            ++i;
            ++j;
        }
    }
    return s;
}

namespace {

// Splits UTF-8 into code points; invalid lead bytes become single units.
std::vector<std::string_view> code_points(std::string_view s) {
    std::vector<std::string_view> out;
    for (std::size_t i = 0; i < s.size();) {
        auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace

DenseVector HashingEmbeddingProvider::embed_dense(std::string_view text) {
    std::string padded = " " + text::normalize_surface(text) + " ";
    auto cps = code_points(padded);
    DenseVector v;
    v.values.assign(kBuckets, 0.0);
    for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
        std::string gram;
        for (std::size_t j = 0; j < 3; ++j) gram.append(cps[i + j]);
        v.values[text::fnv1a32(gram) % kBuckets] += 1.0;
    }
    double n = norm(v);
    if (n > 0.0)
        for (double& x : v.values) x /= n;
    return v;
}

SparseVector HashingEmbeddingProvider::embed_sparse(std::string_view text) {
    std::vector<std::pair<std::uint32_t, double>> entries;
    for (const auto& tok : text::tokenize(text)) entries.emplace_back(text::fnv1a32(tok), 1.0);
    return SparseVector::from_unsorted(std::move(entries));
}

}  // namespace cdemap
