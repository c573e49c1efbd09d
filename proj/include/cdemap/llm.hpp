#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace cdemap {

class LLMProvider {
public:
    virtual ~LLMProvider() = default;

    // Throws ProviderFailure on transport failure.
    virtual std::string complete(const std::string& prompt, double temperature,
                                 std::optional<std::uint64_t> seed) = 0;
    virtual std::string provider_name() const = 0;
};

// Stable hash of (prompt, seed): 16 hex digits of FNV-1a 64 over
// prompt + '\x1f' + decimal seed (or "-" when absent).
std::string prompt_fingerprint(const std::string& prompt, std::optional<std::uint64_t> seed);

// Replays completions keyed by prompt fingerprint. Fixture file:
// {"completions": {"<fingerprint>": "<text>", ...}}.
class ScriptedLLMProvider final : public LLMProvider {
public:
    ScriptedLLMProvider() = default;
    explicit ScriptedLLMProvider(std::map<std::string, std::string> completions)
        : completions_(std::move(completions)) {}

    static std::shared_ptr<ScriptedLLMProvider> from_file(const std::string& path);

    void add(const std::string& prompt, std::optional<std::uint64_t> seed, std::string completion);
    void add_fingerprint(const std::string& fingerprint, std::string completion);

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override;
    std::string provider_name() const override { return "scripted"; }

    const std::map<std::string, std::string>& completions() const { return completions_; }
    void save(const std::string& path) const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> completions_;
};

// Test double driven by a callable.
class FunctionLLMProvider final : public LLMProvider {
public:
    using Fn = std::function<std::string(const std::string& prompt, double temperature,
                                         std::optional<std::uint64_t> seed)>;
    explicit FunctionLLMProvider(Fn fn) : fn_(std::move(fn)) {}

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override {
        return fn_(prompt, temperature, seed);
    }
    std::string provider_name() const override { return "function"; }

private:
    Fn fn_;
};

// Forwards to an inner provider and counts calls.
class CountingLLMProvider final : public LLMProvider {
public:
    explicit CountingLLMProvider(LLMProvider& inner) : inner_(inner) {}

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_.complete(prompt, temperature, seed);
    }
    std::string provider_name() const override { return inner_.provider_name(); }
    std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

private:
    LLMProvider& inner_;
    std::atomic<std::size_t> calls_{0};
};

// Forwards to an inner provider and keeps fingerprint -> completion for
// every call, so a run can be replayed with ScriptedLLMProvider.
class RecordingLLMProvider final : public LLMProvider {
public:
    explicit RecordingLLMProvider(std::shared_ptr<LLMProvider> inner) : inner_(std::move(inner)) {}

    std::string complete(const std::string& prompt, double temperature, std::optional<std::uint64_t> seed) override;
    std::string provider_name() const override { return "recording(" + inner_->provider_name() + ")"; }

    ScriptedLLMProvider replay() const;

private:
    std::shared_ptr<LLMProvider> inner_;
    mutable std::mutex mu_;
    std::map<std::string, std::string> recorded_;
};

}  // namespace cdemap
