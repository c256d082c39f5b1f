#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>

namespace ltner::http {

struct Response {
    int status = 0;
    std::string body;
    std::optional<double> retry_after_s;  // parsed Retry-After, seconds
};

/// POST a JSON body to base_url + path. Transport failures throw a retryable
/// BackendError; HTTP error statuses are returned, not thrown.
Response post_json(const std::string& base_url, const std::string& path, const std::string& body,
                   const std::string& bearer_token, std::chrono::seconds timeout);

struct RetryPolicy {
    int max_attempts = 5;
    double initial_backoff_s = 1.0;
    double multiplier = 2.0;
    double max_backoff_s = 60.0;
};

using Sleeper = std::function<void(double seconds)>;
Sleeper real_sleeper();

/// Runs `attempt` until it succeeds, a non-retryable BackendError escapes, or
/// the policy is exhausted. A RetryAfter error replaces the exponential
/// delay for that wait.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, const Sleeper& sleep, Fn&& attempt, int* attempts_out = nullptr);

}  // namespace ltner::http

#include "ltner/http_retry.inl"
