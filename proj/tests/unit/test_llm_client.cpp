#include <gtest/gtest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "ltner/errors.hpp"
#include "ltner/llm_client.hpp"

using namespace ltner;
namespace fs = std::filesystem;

namespace {

CompletionRequest request(const std::string& text = "hello", double temperature = 0.0) {
    CompletionRequest r;
    r.model = "gpt-3.5-turbo";
    r.messages = {{Role::System, "sys"}, {Role::User, text}};
    r.temperature = temperature;
    return r;
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ltner_test_llm" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Local stand-in for a chat-completions endpoint with a scripted status list.
class FakeApi {
public:
    explicit FakeApi(std::vector<std::pair<int, std::string>> script) : script_(std::move(script)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const std::size_t i = calls_++;
            last_body_ = req.body;
            last_auth_ = req.get_header_value("Authorization");
            const auto& [status, extra] = script_[std::min(i, script_.size() - 1)];
            res.status = status;
            if (status == 429 && !extra.empty()) res.set_header("Retry-After", extra);
            if (status == 200) res.set_content(extra, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeApi() {
        server_.stop();
        thread_.join();
    }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    std::size_t calls() const { return calls_; }
    std::string last_body_, last_auth_;

private:
    std::vector<std::pair<int, std::string>> script_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<std::size_t> calls_{0};
};

const std::string kOk =
    R"({"choices":[{"message":{"role":"assistant","content":"##Japan##LOC won"}}],"usage":{"prompt_tokens":120,"completion_tokens":7}})";

LiveOptions live_opts(const FakeApi& api) {
    LiveOptions o;
    o.base_url = api.base_url();
    o.api_key = "test-key";
    o.retry.max_attempts = 4;
    o.timeout_s = 5;
    return o;
}

}  // namespace

TEST(MoneyTest, ParseAndFormat) {
    EXPECT_EQ(Money::parse("0.5").to_string(), "0.50");
    EXPECT_EQ(Money::parse("2.75").to_string(), "2.75");
    EXPECT_EQ(Money::parse("0.000123").to_string(), "0.000123");
    EXPECT_EQ(Money::parse("3").to_string(), "3.00");
    EXPECT_EQ(Money().to_string(), "0.00");
    EXPECT_THROW(Money::parse(""), ArgumentError);
    EXPECT_THROW(Money::parse("1.2.3"), ArgumentError);
    EXPECT_THROW(Money::parse("-1"), ArgumentError);
    EXPECT_THROW(Money::parse("0.0000000000001"), ArgumentError);
}

TEST(CostOf, Examples) {
    const auto prices = PriceTable::defaults();
    EXPECT_EQ(cost_of({1'000'000, 0}, "gpt-3.5-turbo", prices).to_string(), "0.50");
    EXPECT_EQ(cost_of({1'000'000, 0}, "gpt-3.5-turbo", prices), Money::parse("0.5"));
    EXPECT_EQ(cost_of({0, 0}, "gpt-3.5-turbo", prices), Money());
    EXPECT_EQ(cost_of({2'500'000, 1'000'000}, "gpt-3.5-turbo", prices).to_string(), "2.75");
    EXPECT_THROW(cost_of({1, 1}, "unknown-model", prices), ArgumentError);
}

TEST(CostOf, LinearAndExact) {
    const auto prices = PriceTable::defaults();
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        const TokenUsage a{rng() % 100000, rng() % 100000}, b{rng() % 100000, rng() % 100000};
        const Money sum = cost_of(a, "gpt-3.5-turbo", prices) + cost_of(b, "gpt-3.5-turbo", prices);
        EXPECT_EQ(sum, cost_of({a.input_tokens + b.input_tokens, a.output_tokens + b.output_tokens}, "gpt-3.5-turbo", prices));
    }
    // One token at 0.5 per million is exactly 0.0000005.
    EXPECT_EQ(cost_of({1, 0}, "gpt-3.5-turbo", prices).to_string(), "0.0000005");
}

TEST(PriceTableTest, JsonForms) {
    const auto t = PriceTable::from_json(nlohmann::json::parse(R"({"m":{"input":0.5,"output":"1.5"}})"));
    EXPECT_EQ(cost_of({1'000'000, 1'000'000}, "m", t).to_string(), "2.00");
    EXPECT_EQ(PriceTable::from_json(t.to_json()).to_json(), t.to_json());
    EXPECT_THROW(PriceTable::from_json(nlohmann::json::parse(R"({"m":{"input":-1,"output":1}})")), ArgumentError);
    EXPECT_THROW(PriceTable::from_json(nlohmann::json::parse(R"({"m":{"input":"0.0000001","output":1}})")),
                 ArgumentError);
}

TEST(EstimateTokens, Examples) {
    EXPECT_EQ(estimate_tokens({}), 0u);
    EXPECT_EQ(estimate_tokens({{Role::User, std::string(400, 'x')}}), 104u);
    std::vector<ChatMessage> ms;
    std::uint64_t prev = 0;
    for (int i = 0; i < 20; ++i) {
        ms.push_back({Role::User, std::string(static_cast<std::size_t>(i * 7), 'y')});
        EXPECT_GE(estimate_tokens(ms), prev);
        prev = estimate_tokens(ms);
    }
}

TEST(RequestDigestTest, CoversModelMessagesTemperature) {
    EXPECT_EQ(request_digest(request()), request_digest(request()));
    EXPECT_NE(request_digest(request("hello", 0.0)), request_digest(request("hello", 0.7)));
    EXPECT_NE(request_digest(request("hello")), request_digest(request("hello!")));
    auto other = request();
    other.model = "other";
    EXPECT_NE(request_digest(request()), request_digest(other));
    auto swapped = request();
    swapped.messages[1].role = Role::Assistant;
    EXPECT_NE(request_digest(request()), request_digest(swapped));
    auto longer = request();
    longer.max_output_tokens = 7;
    EXPECT_EQ(request_digest(request()), request_digest(longer));
    EXPECT_EQ(request_digest(request()).size(), 64u);
}

TEST(RequestValidation, Invariants) {
    CompletionRequest r;
    EXPECT_THROW(validate_request(r), ArgumentError);
    r = request();
    r.temperature = -0.1;
    EXPECT_THROW(validate_request(r), ArgumentError);
}

TEST(MockBackendTest, ScriptedWithEstimatedUsage) {
    MockBackend mock([](const CompletionRequest& req, const RequestContext& ctx) {
        return ctx.sentence_id + ":" + req.messages.back().content;
    });
    const auto res = mock.complete(request("abcd"), {"s7"});
    EXPECT_EQ(res.text, "s7:abcd");
    EXPECT_EQ(res.usage.input_tokens, estimate_tokens(request("abcd").messages));
    EXPECT_EQ(res.usage.output_tokens, 2u);
    EXPECT_EQ(res.backend, BackendKind::Mock);
}

TEST(ReplayBackendTest, HitReturnsStoredResultBitwise) {
    const auto dir = fresh_dir("hit");
    ReplayBackend replay(dir);
    CompletionResult stored;
    stored.text = "##Japan##LOC caf\xC3\xA9 won";
    stored.usage = {1234, 56};
    stored.recorded_at = "2024-01-02T03:04:05Z";
    replay.store(request(), stored);
    EXPECT_TRUE(replay.contains(request()));
    const auto got = replay.complete(request(), {});
    EXPECT_EQ(got.text, stored.text);
    EXPECT_EQ(got.usage, stored.usage);
    EXPECT_EQ(got.recorded_at, stored.recorded_at);
    EXPECT_EQ(got.backend, BackendKind::Replay);

    std::ifstream in(replay.entry_path(request_digest(request())));
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j["request"], request_to_json(request()));
    EXPECT_EQ(j["response"]["text"], stored.text);
    EXPECT_EQ(j["response"]["input_tokens"], 1234);
}

TEST(ReplayBackendTest, MissWithoutUpstreamNamesDigest) {
    ReplayBackend replay(fresh_dir("miss"));
    try {
        replay.complete(request("never stored"), {});
        FAIL();
    } catch (const CacheMissError& e) {
        EXPECT_NE(std::string(e.what()).find(request_digest(request("never stored"))), std::string::npos);
        EXPECT_FALSE(e.retryable());
    }
}

TEST(ReplayBackendTest, FallThroughStoresOnce) {
    int calls = 0;
    auto upstream = std::make_shared<MockBackend>([&](const CompletionRequest&, const RequestContext&) {
        ++calls;
        return std::string("answer");
    });
    const auto dir = fresh_dir("fall");
    ReplayBackend replay(dir, upstream);
    EXPECT_EQ(replay.complete(request(), {}).text, "answer");
    EXPECT_EQ(replay.complete(request(), {}).text, "answer");
    EXPECT_EQ(calls, 1);
    ReplayBackend offline(dir);
    EXPECT_EQ(offline.complete(request(), {}).text, "answer");
}

TEST(ReplayBackendTest, ConcurrentStores) {
    const auto dir = fresh_dir("concurrent");
    auto upstream = std::make_shared<MockBackend>(
        [](const CompletionRequest& r, const RequestContext&) { return r.messages.back().content; });
    ReplayBackend replay(dir, upstream);
    std::vector<std::jthread> ts;
    for (int t = 0; t < 8; ++t)
        ts.emplace_back([&, t] {
            for (int i = 0; i < 50; ++i) replay.complete(request("q" + std::to_string((i * 7 + t) % 100)), {});
        });
    ts.clear();
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".json";
    EXPECT_EQ(files, 100u);
}

TEST(LiveBackendTest, ParsesUsageAndSendsWireFormat) {
    FakeApi api({{200, kOk}});
    LiveBackend live(live_opts(api), [](double) {});
    auto req = request();
    req.max_output_tokens = 321;
    const auto res = live.complete(req, {});
    EXPECT_EQ(res.text, "##Japan##LOC won");
    EXPECT_EQ(res.usage, (TokenUsage{120, 7}));
    EXPECT_EQ(res.attempts, 1);
    EXPECT_EQ(res.backend, BackendKind::Live);
    EXPECT_FALSE(res.recorded_at.empty());
    const auto body = nlohmann::json::parse(api.last_body_);
    EXPECT_EQ(body["max_tokens"], 321);
    EXPECT_EQ(body["model"], "gpt-3.5-turbo");
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(api.last_auth_, "Bearer test-key");
}

TEST(LiveBackendTest, HonorsRetryAfterAndBacksOff) {
    FakeApi api({{429, "7"}, {503, ""}, {200, kOk}});
    std::vector<double> sleeps;
    LiveBackend live(live_opts(api), [&](double s) { sleeps.push_back(s); });
    const auto res = live.complete(request(), {});
    EXPECT_EQ(res.attempts, 3);
    EXPECT_EQ(api.calls(), 3u);
    EXPECT_EQ(sleeps, (std::vector<double>{7.0, 2.0}));
}

TEST(LiveBackendTest, GivesUpAfterMaxAttempts) {
    FakeApi api({{500, ""}});
    std::vector<double> sleeps;
    LiveBackend live(live_opts(api), [&](double s) { sleeps.push_back(s); });
    EXPECT_THROW(live.complete(request(), {}), BackendError);
    EXPECT_EQ(api.calls(), 4u);
    EXPECT_EQ(sleeps, (std::vector<double>{1.0, 2.0, 4.0}));
}

TEST(LiveBackendTest, ClientErrorsAreNotRetried) {
    FakeApi api({{401, ""}});
    LiveBackend live(live_opts(api), [](double) {});
    try {
        live.complete(request(), {});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_EQ(api.calls(), 1u);
}

TEST(LiveBackendTest, TransportFailureIsRetryable) {
    LiveOptions o;
    o.base_url = "http://127.0.0.1:1/v1";
    o.api_key = "k";
    o.retry.max_attempts = 2;
    o.timeout_s = 1;
    int sleeps = 0;
    LiveBackend live(o, [&](double) { ++sleeps; });
    EXPECT_THROW(live.complete(request(), {}), BackendError);
    EXPECT_EQ(sleeps, 1);
}

TEST(LiveBackendTest, RequiresApiKey) {
    const char* saved = std::getenv("LTNER_API_KEY");
    const std::string keep = saved ? saved : "";
    unsetenv("LTNER_API_KEY");
    EXPECT_THROW(LiveBackend(LiveOptions{}), ArgumentError);
    setenv("LTNER_API_KEY", "from-env", 1);
    EXPECT_NO_THROW(LiveBackend(LiveOptions{}));
    if (saved) setenv("LTNER_API_KEY", keep.c_str(), 1);
    else unsetenv("LTNER_API_KEY");
}

TEST(RateLimiterTest, SpacesRequests) {
    RateLimiter limiter(6000);  // one per 10 ms
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 6; ++i) limiter.acquire();
    EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(45));
    RateLimiter off(0);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) off.acquire();
    EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(50));
}

TEST(Retries, BackoffIsCapped) {
    http::RetryPolicy p{6, 10.0, 3.0, 50.0};
    std::vector<double> sleeps;
    int attempts = 0;
    EXPECT_THROW(http::with_retries(
                     p, [&](double s) { sleeps.push_back(s); },
                     []() -> int { throw BackendError("flaky", true); }, &attempts),
                 BackendError);
    EXPECT_EQ(attempts, 6);
    EXPECT_EQ(sleeps, (std::vector<double>{10, 30, 50, 50, 50}));
}
