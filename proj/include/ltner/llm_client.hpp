#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ltner/http.hpp"
#include "ltner/prompting.hpp"

namespace ltner {

/// Exact currency amount in units of 1e-12.
class Money {
public:
    constexpr Money() = default;
    static constexpr Money from_pico(std::int64_t p) { return Money(p); }
    /// Decimal string such as "0.5" or "12.000001"; at most 12 fractional digits.
    static Money parse(std::string_view decimal);

    constexpr std::int64_t pico() const { return pico_; }
    double to_double() const { return static_cast<double>(pico_) / 1e12; }
    /// Exact decimal, at least two fractional digits: "0.50", "2.75", "0.000123".
    std::string to_string() const;

    constexpr Money operator+(Money o) const { return Money(pico_ + o.pico_); }
    constexpr Money& operator+=(Money o) {
        pico_ += o.pico_;
        return *this;
    }
    constexpr auto operator<=>(const Money&) const = default;

private:
    constexpr explicit Money(std::int64_t p) : pico_(p) {}
    std::int64_t pico_ = 0;
};

struct TokenUsage {
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;

    bool operator==(const TokenUsage&) const = default;
};

/// Per-model prices per 1M tokens, held in millionths of a currency unit so
/// that cost = tokens * price is an exact integer number of pico-units.
struct ModelPrice {
    std::int64_t input_micro_per_million = 0;
    std::int64_t output_micro_per_million = 0;
};

class PriceTable {
public:
    PriceTable() = default;
    /// gpt-3.5-turbo at 0.5 in / 1.5 out; "mock" at the same rates.
    static PriceTable defaults();
    /// {"model": {"input": 0.5, "output": 1.5}, ...}; numbers or decimal strings.
    static PriceTable from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    void set(const std::string& model, ModelPrice price);
    const ModelPrice& at(const std::string& model) const;
    bool contains(const std::string& model) const { return prices_.count(model) != 0; }

private:
    std::map<std::string, ModelPrice> prices_;
};

Money cost_of(const TokenUsage& usage, const std::string& model, const PriceTable& prices);

/// ceil(total content bytes / 4) + 4 per message. Pre-flight estimate only.
std::uint64_t estimate_tokens(const std::vector<ChatMessage>& messages);

struct CompletionRequest {
    std::string model = "gpt-3.5-turbo";
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::size_t max_output_tokens = 1024;
};

/// SHA-256 of the sorted-key JSON of {model, messages, temperature}.
std::string request_digest(const CompletionRequest& req);
nlohmann::json request_to_json(const CompletionRequest& req);
void validate_request(const CompletionRequest& req);

enum class BackendKind { Live, Replay, Mock };
std::string_view to_string(BackendKind b);
BackendKind backend_kind_from_string(std::string_view s);

struct CompletionResult {
    std::string text;
    TokenUsage usage;
    BackendKind backend = BackendKind::Mock;
    std::uint64_t latency_ms = 0;
    int attempts = 1;
    std::string recorded_at;  // ISO-8601 UTC of the original live call; empty for mock
};

/// Side information a scripted backend may use; never sent over the wire
/// and not part of the request digest.
struct RequestContext {
    std::string sentence_id;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendKind kind() const = 0;
    /// Thread-safe.
    virtual CompletionResult complete(const CompletionRequest& req, const RequestContext& ctx) = 0;
};

/// Spaces request starts at least 60/per_minute seconds apart; 0 disables.
class RateLimiter {
public:
    explicit RateLimiter(double per_minute) : per_minute_(per_minute) {}
    void acquire();

private:
    double per_minute_;
    std::mutex mu_;
    std::chrono::steady_clock::time_point next_{};
};

struct LiveOptions {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key;  // LTNER_API_KEY when empty
    http::RetryPolicy retry;
    int timeout_s = 120;
    double requests_per_minute = 0;
};

/// OpenAI-compatible POST {base_url}/chat/completions.
class LiveBackend final : public Backend {
public:
    explicit LiveBackend(LiveOptions opts, http::Sleeper sleeper = http::real_sleeper());
    BackendKind kind() const override { return BackendKind::Live; }
    CompletionResult complete(const CompletionRequest& req, const RequestContext& ctx) override;

private:
    LiveOptions opts_;
    http::Sleeper sleep_;
    RateLimiter limiter_;
};

using Responder = std::function<std::string(const CompletionRequest&, const RequestContext&)>;

/// Scripted responses; usage is estimated from the request and the reply.
class MockBackend final : public Backend {
public:
    explicit MockBackend(Responder responder) : responder_(std::move(responder)) {}
    BackendKind kind() const override { return BackendKind::Mock; }
    CompletionResult complete(const CompletionRequest& req, const RequestContext& ctx) override;

private:
    Responder responder_;
};

/// Content-addressed transcripts, one <digest>.json per request. Misses fall
/// through to `upstream` when one is given (and the answer is stored),
/// otherwise raise CacheMissError.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(std::filesystem::path dir, std::shared_ptr<Backend> upstream = nullptr);
    BackendKind kind() const override { return BackendKind::Replay; }
    CompletionResult complete(const CompletionRequest& req, const RequestContext& ctx) override;

    std::filesystem::path entry_path(const std::string& digest) const;
    bool contains(const CompletionRequest& req) const;
    void store(const CompletionRequest& req, const CompletionResult& res);
    /// Cached result for a digest, without the request check.
    std::optional<CompletionResult> lookup_digest(const std::string& digest) const;

private:
    std::filesystem::path dir_;
    std::shared_ptr<Backend> upstream_;
    std::mutex write_mu_;
};

std::string utc_now_iso8601();

}  // namespace ltner
