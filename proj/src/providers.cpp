#include "cdemap/providers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <httplib.h>

#include "cdemap/decomposer.hpp"
#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

using nlohmann::json;

std::optional<std::string> prompt_section(const std::string& prompt, const std::string& title) {
    const std::string heading = "### " + title + "\n";
    std::size_t start;
    if (prompt.rfind(heading, 0) == 0) {
        start = heading.size();
    } else {
        auto pos = prompt.find("\n" + heading);
        if (pos == std::string::npos) return std::nullopt;
        start = pos + 1 + heading.size();
    }
    auto end = prompt.find("\n### ", start);
    return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

int lexical_score(std::string_view query, std::string_view name) {
    if (text::normalize_surface(query) == text::normalize_surface(name)) return 10;
    auto qt = text::tokenize(query), nt = text::tokenize(name);
    std::set<std::string> qs(qt.begin(), qt.end()), ns(nt.begin(), nt.end());
    if (qs.empty() || ns.empty()) return 1;
    std::size_t common = 0;
    for (const auto& t : qs) common += ns.count(t);
    double dice = 2.0 * static_cast<double>(common) / static_cast<double>(qs.size() + ns.size());
    return 1 + static_cast<int>(std::lround(8.0 * dice));
}

MockLLMProvider::MockLLMProvider(const json& answers) {
    if (answers.contains("decompositions"))
        for (const auto& [label, rec] : answers.at("decompositions").items())
            decompositions_[text::normalize_surface(label)] = rec;
    if (answers.contains("scores"))
        for (const auto& [query, table] : answers.at("scores").items())
            for (const auto& [name, score] : table.items())
                scores_[text::normalize_surface(query)][text::normalize_surface(name)] =
                    score.is_array() ? score.get<std::vector<int>>() : std::vector<int>{score.get<int>()};
    if (answers.contains("judgements"))
        for (const auto& [label, verdict] : answers.at("judgements").items())
            judgements_[text::normalize_surface(label)] = verdict.get<std::string>();
}

std::shared_ptr<MockLLMProvider> MockLLMProvider::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return std::make_shared<MockLLMProvider>(json::parse(in));
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
}

std::string MockLLMProvider::complete(const std::string& prompt, double, std::optional<std::uint64_t> seed) {
    auto task = prompt_section(prompt, "Task").value_or("");
    if (task.rfind("Decompose", 0) == 0) return decompose(prompt);
    if (task.rfind("Rate how relevant", 0) == 0) return rerank(prompt, seed.value_or(0));
    if (task.rfind("Decide whether", 0) == 0) return judge(prompt);
    return "";
}

std::string MockLLMProvider::decompose(const std::string& prompt) const {
    std::map<std::string, std::string> fields;
    for (const auto& line : text::split(prompt_section(prompt, "Query").value_or(""), '\n')) {
        auto colon = line.find(": ");
        if (colon == std::string::npos) continue;
        fields[line.substr(0, colon)] = text::trim(line.substr(colon + 2));
    }
    const std::string label = fields["label"];
    if (auto it = decompositions_.find(text::normalize_surface(label)); it != decompositions_.end())
        return it->second.dump();

    nlohmann::ordered_json out;
    out["refined_query"] = label;
    out["base_entity"] = label;
    out["associated_entities"] = json::array();
    std::vector<std::string> cats;
    if (fields.count("categories"))
        for (const auto& c : text::split(fields["categories"], '|'))
            if (!text::trim(c).empty()) cats.push_back(text::trim(c));
    out["categories"] = cats;
    for (const char* key : {"unit", "visit", "formula"})
        if (fields.count(key)) out[key] = fields[key];
    if (fields.count("unit")) out["domain"] = "Measurement";
    return out.dump();
}

std::string MockLLMProvider::rerank(const std::string& prompt, std::uint64_t seed) const {
    std::string query = text::trim(text::split(prompt_section(prompt, "Query").value_or(""), '\n').front());
    auto table = scores_.find(text::normalize_surface(query));
    std::string out;
    std::size_t i = 0;
    for (const auto& line : text::split(prompt_section(prompt, "Candidates").value_or(""), '\n')) {
        auto dot = line.find(". ");
        auto meta = line.rfind(" (vocabulary: ");
        if (dot == std::string::npos || meta == std::string::npos || meta < dot) continue;
        std::string name = line.substr(dot + 2, meta - dot - 2);
        int score = lexical_score(query, name);
        if (table != scores_.end())
            if (auto s = table->second.find(text::normalize_surface(name)); s != table->second.end())
                score = s->second[seed % s->second.size()];
        if (!out.empty()) out += " ";
        out += std::to_string(++i) + ":" + std::to_string(score);
    }
    return out;
}

std::string MockLLMProvider::judge(const std::string& prompt) const {
    std::string label = text::trim(prompt_section(prompt, "Label").value_or(""));
    if (auto it = judgements_.find(text::normalize_surface(label)); it != judgements_.end()) return it->second;
    int best = 1;
    for (const auto& line : text::split(prompt_section(prompt, "Proposed concepts").value_or(""), '\n')) {
        if (line.rfind("- ", 0) != 0) continue;
        auto paren = line.rfind(" (");
        best = std::max(best, lexical_score(label, line.substr(2, paren == std::string::npos ? std::string::npos : paren - 2)));
    }
    if (best >= 8) return "correct";
    if (best >= 3) return "partially correct";
    return "incorrect";
}

WireEndpoint WireEndpoint::parse(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw InvalidConfig("endpoint URL needs a scheme: " + url);
    auto path = url.find('/', scheme + 3);
    WireEndpoint e;
    e.host = url.substr(0, path);
    if (path != std::string::npos) e.prefix = url.substr(path);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
}

json post_json(const WireEndpoint& endpoint, const std::string& path, const json& body) {
    httplib::Client client(endpoint.host);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
    client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    const std::string target = endpoint.prefix + path;
    auto res = client.Post(target, body.dump(), "application/json");
    if (!res) throw ProviderFailure("POST " + endpoint.host + target + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw ProviderFailure("POST " + endpoint.host + target + ": HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw ProviderFailure("POST " + endpoint.host + target + ": unparsable reply: " + e.what());
    }
}

DenseVector WireEmbeddingProvider::embed_dense(std::string_view text) {
    json reply = post_json(endpoint_, "/embed", {{"texts", json::array({std::string(text)})}});
    try {
        const auto& vectors = reply.at("vectors");
        if (vectors.size() != 1) throw ProviderFailure("embed: expected 1 vector, got " + std::to_string(vectors.size()));
        return DenseVector{vectors.at(0).get<std::vector<double>>()};
    } catch (const json::exception& e) {
        throw ProviderFailure(std::string("embed: malformed reply: ") + e.what());
    }
}

SparseVector WireEmbeddingProvider::embed_sparse(std::string_view text) {
    json reply = post_json(endpoint_, "/sparse", {{"texts", json::array({std::string(text)})}});
    try {
        const auto& lists = reply.at("entries");
        if (lists.size() != 1) throw ProviderFailure("sparse: expected 1 entry list, got " + std::to_string(lists.size()));
        std::vector<std::pair<std::uint32_t, double>> entries;
        for (const auto& e : lists.at(0))
            entries.emplace_back(e.at("term").get<std::uint32_t>(), e.at("weight").get<double>());
        return SparseVector::from_unsorted(std::move(entries));
    } catch (const json::exception& e) {
        throw ProviderFailure(std::string("sparse: malformed reply: ") + e.what());
    }
}

std::string WireLLMProvider::complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) {
    json body = {{"prompt", prompt}, {"temperature", temperature}, {"seed", seed ? json(*seed) : json(nullptr)}};
    json reply = post_json(endpoint_, "/complete", body);
    if (!reply.contains("text") || !reply.at("text").is_string()) throw ProviderFailure("complete: reply has no text");
    return reply.at("text").get<std::string>();
}

}  // namespace cdemap
