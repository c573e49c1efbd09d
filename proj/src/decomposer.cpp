#include "cdemap/decomposer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include "cdemap/csv.hpp"
#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view scale_name(Scale s) {
    switch (s) {
        case Scale::continuous: return "continuous";
        case Scale::nominal: return "nominal";
        case Scale::ordinal: return "ordinal";
    }
    return "continuous";
}

std::optional<Scale> parse_scale(std::string_view s) {
    std::string k = text::normalize_surface(s);
    if (k == "continuous") return Scale::continuous;
    if (k == "nominal") return Scale::nominal;
    if (k == "ordinal") return Scale::ordinal;
    return std::nullopt;
}

namespace {

std::optional<std::string> clean_optional(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    std::string t = text::squash_whitespace(*s);
    if (t.empty()) return std::nullopt;
    return t;
}

// Squashes, drops empties and normalized duplicates, keeps first spelling.
std::vector<std::string> clean_list(const std::vector<std::string>& in) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : in) {
        std::string t = text::squash_whitespace(s);
        if (t.empty()) continue;
        if (seen.insert(text::normalize_surface(t)).second) out.push_back(std::move(t));
    }
    return out;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw BadPayload(std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
}

std::vector<std::string> string_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key) || j.at(key).is_null()) return out;
    const auto& v = j.at(key);
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
        return out;
    }
    if (!v.is_array()) throw BadPayload(std::string("field '") + key + "' must be a list of strings");
    for (const auto& item : v) {
        if (!item.is_string()) throw BadPayload(std::string("field '") + key + "' must be a list of strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

void put_opt(ordered_json& j, const char* key, const std::optional<std::string>& v) {
    if (v) j[key] = *v;
}

}  // namespace

void check_decomposition(const DecomposedQuery& q) {
    if (text::trim(q.base_entity).empty()) throw InvalidEntry("base_entity is empty");
    for (const auto* opt : {&q.unit, &q.visit, &q.method, &q.formula, &q.domain_hint})
        if (*opt && text::trim(**opt).empty()) throw InvalidEntry("optional component present but empty");
    for (const auto* list : {&q.associated_entities, &q.categories}) {
        std::set<std::string> seen;
        for (const auto& s : *list) {
            if (text::trim(s).empty()) throw InvalidEntry("empty list item");
            if (!seen.insert(text::normalize_surface(s)).second) throw InvalidEntry("duplicate list item '" + s + "'");
        }
    }
}

ordered_json entry_to_json(const DataDictionaryEntry& e) {
    ordered_json j;
    j["name"] = e.name;
    j["label"] = e.label;
    put_opt(j, "data_type", e.metadata.data_type);
    if (e.metadata.scale) j["scale"] = std::string(scale_name(*e.metadata.scale));
    put_opt(j, "unit", e.metadata.unit);
    put_opt(j, "formula", e.metadata.formula);
    put_opt(j, "visit", e.metadata.visit);
    if (!e.metadata.categories.empty()) j["categories"] = e.metadata.categories;
    return j;
}

DataDictionaryEntry entry_from_json(const json& j) {
    if (!j.is_object()) throw BadPayload("entry must be an object");
    DataDictionaryEntry e;
    e.name = opt_string(j, "name").value_or("");
    e.label = opt_string(j, "label").value_or("");
    e.metadata.data_type = opt_string(j, "data_type");
    if (auto s = opt_string(j, "scale"); s && !text::trim(*s).empty()) {
        e.metadata.scale = parse_scale(*s);
        if (!e.metadata.scale) throw BadPayload("unknown scale '" + *s + "'");
    }
    e.metadata.unit = opt_string(j, "unit");
    e.metadata.formula = opt_string(j, "formula");
    e.metadata.visit = opt_string(j, "visit");
    e.metadata.categories = string_list(j, "categories");
    return e;
}

ordered_json decomposition_to_json(const DecomposedQuery& q) {
    ordered_json j;
    j["refined_query"] = q.refined_query;
    j["base_entity"] = q.base_entity;
    j["associated_entities"] = q.associated_entities;
    j["categories"] = q.categories;
    put_opt(j, "unit", q.unit);
    put_opt(j, "visit", q.visit);
    put_opt(j, "method", q.method);
    put_opt(j, "formula", q.formula);
    put_opt(j, "domain", q.domain_hint);
    return j;
}

DecomposedQuery decomposition_from_json(const json& j) {
    if (!j.is_object()) throw BadPayload("decomposition must be an object");
    DecomposedQuery q;
    q.refined_query = opt_string(j, "refined_query").value_or("");
    q.base_entity = opt_string(j, "base_entity").value_or("");
    q.associated_entities = string_list(j, "associated_entities");
    q.categories = string_list(j, "categories");
    q.unit = opt_string(j, "unit");
    q.visit = opt_string(j, "visit");
    q.method = opt_string(j, "method");
    q.formula = opt_string(j, "formula");
    q.domain_hint = opt_string(j, "domain");
    return q;
}

std::vector<DataDictionaryEntry> dictionary_from_json(const json& j) {
    const json& arr = j.is_object() && j.contains("entries") ? j.at("entries") : j;
    if (!arr.is_array()) throw BadPayload("dictionary must be an array of entry records");
    std::vector<DataDictionaryEntry> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        try {
            out.push_back(entry_from_json(arr[i]));
        } catch (const BadPayload& e) {
            throw BadPayload("record " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

std::vector<DataDictionaryEntry> load_dictionary_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return dictionary_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw BadPayload(path + ": " + e.what());
    }
}

std::vector<DataDictionaryEntry> load_dictionary_csv(const std::string& path) {
    std::vector<DataDictionaryEntry> out;
    for (const auto& row :
         csv::read_table(path, {"name", "label", "data_type", "scale", "unit", "formula", "visit", "categories"})) {
        const auto& f = row.fields;
        auto opt = [](const std::string& s) -> std::optional<std::string> {
            if (s.empty()) return std::nullopt;
            return s;
        };
        DataDictionaryEntry e;
        e.name = f[0];
        e.label = f[1];
        e.metadata.data_type = opt(f[2]);
        if (!text::trim(f[3]).empty()) {
            e.metadata.scale = parse_scale(f[3]);
            if (!e.metadata.scale)
                throw MalformedRow(path + " line " + std::to_string(row.line) + ": unknown scale '" + f[3] + "'");
        }
        e.metadata.unit = opt(f[4]);
        e.metadata.formula = opt(f[5]);
        e.metadata.visit = opt(f[6]);
        if (!f[7].empty()) e.metadata.categories = text::split(f[7], '|');
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<DataDictionaryEntry> load_dictionary(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : text::normalize_surface(path.substr(dot));
    if (ext == ".json") return load_dictionary_json(path);
    return load_dictionary_csv(path);
}

void write_dictionary_csv(const std::string& path, const std::vector<DataDictionaryEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "name,label,data_type,scale,unit,formula,visit,categories\n";
    for (const auto& e : entries) {
        const auto& m = e.metadata;
        out << csv::format_row({e.name, e.label, m.data_type.value_or(""),
                                m.scale ? std::string(scale_name(*m.scale)) : std::string(), m.unit.value_or(""),
                                m.formula.value_or(""), m.visit.value_or(""), text::join(m.categories, "|")})
            << '\n';
    }
}

void write_dictionary_json(const std::string& path, const std::vector<DataDictionaryEntry>& entries) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : entries) arr.push_back(entry_to_json(e));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << arr.dump(2) << '\n';
}

DataDictionaryEntry validate_input(const DataDictionaryEntry& entry) {
    DataDictionaryEntry out;
    out.name = text::squash_whitespace(entry.name);
    out.label = text::squash_whitespace(entry.label);
    if (out.label.empty())
        throw InvalidEntry("entry '" + out.name + "': label is mandatory and must not be empty");
    out.metadata.data_type = clean_optional(entry.metadata.data_type);
    out.metadata.scale = entry.metadata.scale;
    out.metadata.unit = clean_optional(entry.metadata.unit);
    out.metadata.formula = clean_optional(entry.metadata.formula);
    out.metadata.visit = clean_optional(entry.metadata.visit);
    // Categories de-duplicate on exact trimmed text; "Yes" and "yes" are kept
    // apart here because source codes can differ by case.
    std::set<std::string> seen;
    for (const auto& c : entry.metadata.categories) {
        std::string t = text::squash_whitespace(c);
        if (!t.empty() && seen.insert(t).second) out.metadata.categories.push_back(std::move(t));
    }
    return out;
}

ExampleBank::ExampleBank(std::vector<DecompositionExample> examples) : examples_(std::move(examples)) {
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        try {
            check_decomposition(examples_[i].output);
        } catch (const InvalidEntry& e) {
            throw InvalidConfig("example " + std::to_string(i + 1) + ": " + e.what());
        }
    }
}

ExampleBank ExampleBank::from_json(const json& j) {
    if (!j.is_array()) throw InvalidConfig("example bank must be an array of {input, output} records");
    std::vector<DecompositionExample> examples;
    for (const auto& rec : j) {
        if (!rec.contains("input") || !rec.contains("output"))
            throw InvalidConfig("example bank record needs input and output");
        examples.push_back({entry_from_json(rec.at("input")), decomposition_from_json(rec.at("output"))});
    }
    return ExampleBank(std::move(examples));
}

ExampleBank ExampleBank::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
}

void ExampleBank::embed(EmbeddingProvider& provider) {
    embeddings_.clear();
    for (const auto& ex : examples_) embeddings_.push_back(provider.embed_dense(ex.input.label));
}

std::vector<DecompositionExample> select_examples(const DataDictionaryEntry& entry, const ExampleBank& bank,
                                                  std::size_t m, EmbeddingProvider& provider) {
    std::vector<DecompositionExample> out;
    if (m == 0 || bank.size() == 0) return out;
    if (bank.embeddings().size() != bank.size()) throw InvalidConfig("example bank has not been embedded");
    DenseVector q = provider.embed_dense(entry.label);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < bank.size(); ++i) scored.emplace_back(cosine(q, bank.embeddings()[i]), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < std::min(m, scored.size()); ++i) out.push_back(bank.examples()[scored[i].second]);
    return out;
}

std::string serialize_entry(const DataDictionaryEntry& entry) {
    std::string out;
    if (!entry.name.empty()) out += "name: " + entry.name + "\n";
    out += "label: " + entry.label + "\n";
    const auto& m = entry.metadata;
    if (m.data_type) out += "data_type: " + *m.data_type + "\n";
    if (m.scale) out += "scale: " + std::string(scale_name(*m.scale)) + "\n";
    if (m.unit) out += "unit: " + *m.unit + "\n";
    if (m.formula) out += "formula: " + *m.formula + "\n";
    if (m.visit) out += "visit: " + *m.visit + "\n";
    if (!m.categories.empty()) out += "categories: " + text::join(m.categories, " | ") + "\n";
    return out;
}

namespace {

constexpr const char* kDecompositionInstruction =
    "### Task\n"
    "Decompose the clinical data-dictionary entry below into components that can each be linked to a "
    "controlled-vocabulary concept. First rewrite the entry as a clear refined query. Then extract:\n"
    "- base_entity: the primary clinical term\n"
    "- associated_entities: related concepts that qualify the base entity\n"
    "- categories: permissible values, as labels only (drop numeric codes such as \"0=\")\n"
    "- unit: measurement unit\n"
    "- visit: timing context of the measurement\n"
    "- method: measurement method or procedure\n"
    "- formula: derivation formula\n"
    "- domain: one of Condition, Drug, Measurement, Observation, Procedure, Device, Unit, Visit\n"
    "Omit components that are not present in the entry.\n";

constexpr const char* kDecompositionSchema =
    "### Output format\n"
    "Respond with a single JSON object and nothing else:\n"
    "{\"refined_query\": string, \"base_entity\": string, \"associated_entities\": [string], "
    "\"categories\": [string], \"unit\": string|null, \"visit\": string|null, \"method\": string|null, "
    "\"formula\": string|null, \"domain\": string|null}\n";

}  // namespace

std::string build_decomposition_prompt(const DataDictionaryEntry& entry,
                                       const std::vector<DecompositionExample>& examples,
                                       const std::string& rules_text) {
    std::string p = kDecompositionInstruction;
    if (!text::trim(rules_text).empty()) {
        p += "\n### Linking rules\n" + rules_text;
        if (rules_text.back() != '\n') p += "\n";
    }
    if (!examples.empty()) {
        p += "\n### Examples\n";
        for (std::size_t i = 0; i < examples.size(); ++i) {
            p += "Example " + std::to_string(i + 1) + " input:\n" + serialize_entry(examples[i].input);
            p += "Example " + std::to_string(i + 1) + " output:\n" + decomposition_to_json(examples[i].output).dump() + "\n";
        }
    }
    p += "\n### Query\n" + serialize_entry(entry);
    p += "\n";
    p += kDecompositionSchema;
    return p;
}

std::string strip_category_code(std::string_view category) {
    static const std::regex code_prefix(R"(^\s*-?[0-9]+(\.[0-9]+)?\s*[=:)]\s*)");
    std::string s(category);
    std::smatch m;
    if (std::regex_search(s, m, code_prefix) && m.length(0) < static_cast<std::ptrdiff_t>(s.size()))
        s = s.substr(static_cast<std::size_t>(m.length(0)));
    return text::squash_whitespace(s);
}

DecomposedQuery parse_decomposition(const std::string& completion, const DataDictionaryEntry& entry) {
    auto open = completion.find('{');
    auto close = completion.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw DecompositionFailure("completion contains no JSON object");
    json j;
    try {
        j = json::parse(completion.substr(open, close - open + 1));
    } catch (const json::exception&) {
        throw DecompositionFailure("completion is not valid JSON");
    }
    DecomposedQuery raw;
    try {
        raw = decomposition_from_json(j);
    } catch (const BadPayload& e) {
        throw DecompositionFailure(e.what());
    }
    DecomposedQuery q;
    q.refined_query = text::squash_whitespace(raw.refined_query);
    if (q.refined_query.empty()) q.refined_query = entry.label;
    q.base_entity = text::squash_whitespace(raw.base_entity);
    if (q.base_entity.empty()) throw DecompositionFailure("base_entity is missing or empty");
    q.associated_entities = clean_list(raw.associated_entities);
    std::vector<std::string> cats;
    for (const auto& c : raw.categories) cats.push_back(strip_category_code(c));
    q.categories = clean_list(cats);
    q.unit = clean_optional(raw.unit);
    q.visit = clean_optional(raw.visit);
    q.method = clean_optional(raw.method);
    q.formula = clean_optional(raw.formula);
    q.domain_hint = clean_optional(raw.domain_hint);
    return q;
}

bool is_bare_term(const DataDictionaryEntry& entry) {
    return entry.metadata.empty() && text::word_count(entry.label) <= kBareTermMaxWords;
}

DecompositionResult decompose(const DataDictionaryEntry& entry, LLMProvider& llm, const ExampleBank& bank,
                              EmbeddingProvider& embedder, const DecomposeOptions& options) {
    DecompositionResult result;
    if (is_bare_term(entry)) {
        result.bypassed = true;
        result.query.refined_query = entry.label;
        result.query.base_entity = entry.label;
        return result;
    }
    auto examples = select_examples(entry, bank, options.example_count, embedder);
    const std::string prompt = build_decomposition_prompt(entry, examples, options.rules_text);
    std::string current = prompt;
    std::string last_error;
    for (int attempt = 1; attempt <= kDecompositionMaxAttempts; ++attempt) {
        result.attempts = attempt;
        std::string completion;
        try {
            completion = llm.complete(current, 0.0, options.seed);
        } catch (const ProviderFailure& e) {
            throw DecompositionFailure(std::string("provider failure: ") + e.what());
        }
        try {
            result.query = parse_decomposition(completion, entry);
            check_decomposition(result.query);
            return result;
        } catch (const Error& e) {
            last_error = e.what();
        }
        current = prompt + "\n### Repair (attempt " + std::to_string(attempt + 1) + " of " +
                  std::to_string(kDecompositionMaxAttempts) + ")\nYour previous output could not be used: " +
                  last_error + ". Respond again with only the JSON object described above.\n";
    }
    throw DecompositionFailure("no valid decomposition after " + std::to_string(kDecompositionMaxAttempts) +
                               " attempts: " + last_error);
}

}  // namespace cdemap
