#include "ltner/llm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "ltner/digest.hpp"
#include "ltner/errors.hpp"

namespace ltner {

namespace {

constexpr std::int64_t kPicoPerUnit = 1'000'000'000'000;
constexpr std::int64_t kPicoPerMicro = 1'000'000;

std::int64_t price_micro_from_json(const nlohmann::json& v, const std::string& what) {
    if (v.is_string()) {
        const Money m = Money::parse(v.get<std::string>());
        if (m.pico() % kPicoPerMicro != 0) throw ArgumentError(what + ": prices allow at most 6 decimals");
        return m.pico() / kPicoPerMicro;
    }
    if (!v.is_number()) throw ArgumentError(what + ": price must be a number");
    const double x = v.get<double>();
    if (x < 0 || !std::isfinite(x)) throw ArgumentError(what + ": price must be >= 0");
    return std::llround(x * 1e6);
}

std::string micro_to_decimal(std::int64_t micro) { return Money::from_pico(micro * kPicoPerMicro).to_string(); }

}  // namespace

Money Money::parse(std::string_view s) {
    if (s.empty()) throw ArgumentError("empty decimal");
    std::int64_t whole = 0, frac = 0;
    int frac_digits = 0;
    bool dot = false, any = false;
    for (char c : s) {
        if (c == '.' && !dot) {
            dot = true;
            continue;
        }
        if (c < '0' || c > '9') throw ArgumentError("bad decimal '" + std::string(s) + "'");
        any = true;
        if (dot) {
            if (++frac_digits > 12) throw ArgumentError("decimal '" + std::string(s) + "' has more than 12 places");
            frac = frac * 10 + (c - '0');
        } else {
            if (whole > (INT64_MAX / kPicoPerUnit)) throw ArgumentError("decimal '" + std::string(s) + "' too large");
            whole = whole * 10 + (c - '0');
        }
    }
    if (!any) throw ArgumentError("bad decimal '" + std::string(s) + "'");
    for (int i = frac_digits; i < 12; ++i) frac *= 10;
    return Money(whole * kPicoPerUnit + frac);
}

std::string Money::to_string() const {
    const bool neg = pico_ < 0;
    const std::uint64_t a = neg ? static_cast<std::uint64_t>(-pico_) : static_cast<std::uint64_t>(pico_);
    std::string frac = std::to_string(a % kPicoPerUnit);
    frac.insert(0, 12 - frac.size(), '0');
    while (frac.size() > 2 && frac.back() == '0') frac.pop_back();
    return (neg ? "-" : "") + std::to_string(a / kPicoPerUnit) + "." + frac;
}

PriceTable PriceTable::defaults() {
    PriceTable t;
    t.set("gpt-3.5-turbo", {500'000, 1'500'000});
    t.set("mock", {500'000, 1'500'000});
    return t;
}

PriceTable PriceTable::from_json(const nlohmann::json& j) {
    PriceTable t;
    for (const auto& [model, p] : j.items()) {
        t.set(model, {price_micro_from_json(p.at("input"), model + ".input"),
                      price_micro_from_json(p.at("output"), model + ".output")});
    }
    return t;
}

nlohmann::json PriceTable::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [model, p] : prices_)
        j[model] = {{"input", micro_to_decimal(p.input_micro_per_million)},
                    {"output", micro_to_decimal(p.output_micro_per_million)}};
    return j;
}

void PriceTable::set(const std::string& model, ModelPrice price) {
    if (price.input_micro_per_million < 0 || price.output_micro_per_million < 0)
        throw ArgumentError("negative price for " + model);
    prices_[model] = price;
}

const ModelPrice& PriceTable::at(const std::string& model) const {
    auto it = prices_.find(model);
    if (it == prices_.end()) throw ArgumentError("no price for model '" + model + "'");
    return it->second;
}

Money cost_of(const TokenUsage& usage, const std::string& model, const PriceTable& prices) {
    const ModelPrice& p = prices.at(model);
    // tokens * (micro-units per 1M tokens) is already pico-units.
    return Money::from_pico(static_cast<std::int64_t>(usage.input_tokens) * p.input_micro_per_million +
                            static_cast<std::int64_t>(usage.output_tokens) * p.output_micro_per_million);
}

std::uint64_t estimate_tokens(const std::vector<ChatMessage>& messages) {
    std::uint64_t bytes = 0;
    for (const auto& m : messages) bytes += m.content.size();
    return (bytes + 3) / 4 + 4 * messages.size();
}

nlohmann::json request_to_json(const CompletionRequest& req) {
    return {{"model", req.model}, {"messages", messages_to_json(req.messages)}, {"temperature", req.temperature}};
}

std::string request_digest(const CompletionRequest& req) { return sha256_hex(canonical_dump(request_to_json(req))); }

void validate_request(const CompletionRequest& req) {
    if (req.messages.empty()) throw ArgumentError("completion request has no messages");
    if (!(req.temperature >= 0)) throw ArgumentError("temperature must be >= 0");
}

std::string_view to_string(BackendKind b) {
    switch (b) {
        case BackendKind::Live: return "live";
        case BackendKind::Replay: return "replay";
        case BackendKind::Mock: return "mock";
    }
    return "mock";
}

BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "live") return BackendKind::Live;
    if (s == "replay") return BackendKind::Replay;
    if (s == "mock") return BackendKind::Mock;
    throw ArgumentError("unknown backend '" + std::string(s) + "' (live|replay|mock)");
}

std::string utc_now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RateLimiter::acquire() {
    if (per_minute_ <= 0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(60.0 / per_minute_));
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_);
        next_ = slot + interval;
    }
    std::this_thread::sleep_until(slot);
}

LiveBackend::LiveBackend(LiveOptions opts, http::Sleeper sleeper)
    : opts_(std::move(opts)), sleep_(std::move(sleeper)), limiter_(opts_.requests_per_minute) {
    if (opts_.api_key.empty()) {
        if (const char* key = std::getenv("LTNER_API_KEY")) opts_.api_key = key;
    }
    if (opts_.api_key.empty()) throw ArgumentError("live backend needs LTNER_API_KEY");
}

CompletionResult LiveBackend::complete(const CompletionRequest& req, const RequestContext&) {
    validate_request(req);
    nlohmann::json body = request_to_json(req);
    body["max_tokens"] = req.max_output_tokens;
    const std::string payload = canonical_dump(body);

    int attempts = 0;
    const auto start = std::chrono::steady_clock::now();
    auto result = http::with_retries(
        opts_.retry, sleep_,
        [&] {
            limiter_.acquire();
            auto res = http::post_json(opts_.base_url, "/chat/completions", payload, opts_.api_key,
                                       std::chrono::seconds(opts_.timeout_s));
            if (res.status == 429) throw http::RetryAfter("chat completions: HTTP 429", res.retry_after_s);
            if (res.status >= 500) throw BackendError("chat completions: HTTP " + std::to_string(res.status), true);
            if (res.status != 200)
                throw BackendError("chat completions: HTTP " + std::to_string(res.status) + ": " + res.body, false);
            auto j = nlohmann::json::parse(res.body, nullptr, false);
            if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
                throw BackendError("chat completions: malformed response body", false);
            CompletionResult out;
            const auto& content = j["choices"][0]["message"]["content"];
            out.text = content.is_string() ? content.get<std::string>() : std::string();
            if (j.contains("usage")) {
                out.usage.input_tokens = j["usage"].value("prompt_tokens", std::uint64_t{0});
                out.usage.output_tokens = j["usage"].value("completion_tokens", std::uint64_t{0});
            }
            return out;
        },
        &attempts);
    result.backend = BackendKind::Live;
    result.attempts = attempts;
    result.latency_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
    result.recorded_at = utc_now_iso8601();
    return result;
}

CompletionResult MockBackend::complete(const CompletionRequest& req, const RequestContext& ctx) {
    validate_request(req);
    CompletionResult out;
    out.text = responder_(req, ctx);
    out.usage.input_tokens = estimate_tokens(req.messages);
    out.usage.output_tokens = (out.text.size() + 3) / 4;
    out.backend = BackendKind::Mock;
    return out;
}

ReplayBackend::ReplayBackend(std::filesystem::path dir, std::shared_ptr<Backend> upstream)
    : dir_(std::move(dir)), upstream_(std::move(upstream)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path ReplayBackend::entry_path(const std::string& digest) const { return dir_ / (digest + ".json"); }

bool ReplayBackend::contains(const CompletionRequest& req) const {
    return std::filesystem::exists(entry_path(request_digest(req)));
}

std::optional<CompletionResult> ReplayBackend::lookup_digest(const std::string& digest) const {
    std::ifstream in(entry_path(digest));
    if (!in) return std::nullopt;
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("response"))
        throw LoadError("replay entry " + entry_path(digest).string() + ": field 'response' missing or corrupt");
    const auto& r = j["response"];
    CompletionResult out;
    out.text = r.at("text").get<std::string>();
    out.usage = {r.at("input_tokens").get<std::uint64_t>(), r.at("output_tokens").get<std::uint64_t>()};
    out.recorded_at = j.value("recorded_at", std::string());
    out.backend = BackendKind::Replay;
    return out;
}

void ReplayBackend::store(const CompletionRequest& req, const CompletionResult& res) {
    nlohmann::json j = {{"request", request_to_json(req)},
                        {"response",
                         {{"text", res.text},
                          {"input_tokens", res.usage.input_tokens},
                          {"output_tokens", res.usage.output_tokens}}},
                        {"recorded_at", res.recorded_at}};
    const std::string digest = request_digest(req);
    std::lock_guard lock(write_mu_);
    const auto final_path = entry_path(digest);
    auto tmp = final_path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw BackendError("cannot write replay entry " + tmp.string(), false);
        out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
    std::filesystem::rename(tmp, final_path);
}

CompletionResult ReplayBackend::complete(const CompletionRequest& req, const RequestContext& ctx) {
    validate_request(req);
    const std::string digest = request_digest(req);
    if (auto hit = lookup_digest(digest)) return *hit;
    if (!upstream_) throw CacheMissError(digest);
    CompletionResult res = upstream_->complete(req, ctx);
    store(req, res);
    return res;
}

}  // namespace ltner
