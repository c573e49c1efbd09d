#include "cdemap/llm.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "cdemap/errors.hpp"
#include "cdemap/text.hpp"

namespace cdemap {

std::string prompt_fingerprint(const std::string& prompt, std::optional<std::uint64_t> seed) {
    std::string keyed = prompt;
    keyed.push_back('\x1f');
    keyed += seed ? std::to_string(*seed) : std::string("-");
    return text::hex64(text::fnv1a64(keyed));
}

std::shared_ptr<ScriptedLLMProvider> ScriptedLLMProvider::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedRow(path + ": " + e.what());
    }
    auto provider = std::make_shared<ScriptedLLMProvider>();
    const auto& comps = j.contains("completions") ? j.at("completions") : j;
    for (auto it = comps.begin(); it != comps.end(); ++it) provider->add_fingerprint(it.key(), it.value().get<std::string>());
    return provider;
}

void ScriptedLLMProvider::add(const std::string& prompt, std::optional<std::uint64_t> seed, std::string completion) {
    add_fingerprint(prompt_fingerprint(prompt, seed), std::move(completion));
}

void ScriptedLLMProvider::add_fingerprint(const std::string& fingerprint, std::string completion) {
    std::lock_guard lock(mu_);
    completions_[fingerprint] = std::move(completion);
}

std::string ScriptedLLMProvider::complete(const std::string& prompt, double, std::optional<std::uint64_t> seed) {
    std::string fp = prompt_fingerprint(prompt, seed);
    std::lock_guard lock(mu_);
    auto it = completions_.find(fp);
    if (it == completions_.end()) throw ProviderFailure("scripted provider has no completion for fingerprint " + fp);
    return it->second;
}

void ScriptedLLMProvider::save(const std::string& path) const {
    nlohmann::ordered_json j;
    j["completions"] = nlohmann::ordered_json::object();
    {
        std::lock_guard lock(mu_);
        for (const auto& [fp, text] : completions_) j["completions"][fp] = text;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

std::string RecordingLLMProvider::complete(const std::string& prompt, double temperature,
                                           std::optional<std::uint64_t> seed) {
    std::string out = inner_->complete(prompt, temperature, seed);
    std::lock_guard lock(mu_);
    recorded_[prompt_fingerprint(prompt, seed)] = out;
    return out;
}

ScriptedLLMProvider RecordingLLMProvider::replay() const {
    std::lock_guard lock(mu_);
    return ScriptedLLMProvider(recorded_);
}

}  // namespace cdemap
