#pragma once

#include <algorithm>

#include "ltner/errors.hpp"

namespace ltner::http {

/// Thrown by an attempt to ask for a specific delay (HTTP 429 Retry-After).
class RetryAfter : public BackendError {
public:
    RetryAfter(const std::string& what, std::optional<double> delay_s)
        : BackendError(what, true), delay_s_(delay_s) {}
    std::optional<double> delay_s() const { return delay_s_; }

private:
    std::optional<double> delay_s_;
};

template <typename Fn>
auto with_retries(const RetryPolicy& policy, const Sleeper& sleep, Fn&& attempt, int* attempts_out) {
    double backoff = policy.initial_backoff_s;
    for (int n = 1;; ++n) {
        if (attempts_out) *attempts_out = n;
        try {
            return attempt();
        } catch (const RetryAfter& e) {
            if (n >= policy.max_attempts) throw;
            sleep(e.delay_s().value_or(backoff));
        } catch (const BackendError& e) {
            if (!e.retryable() || n >= policy.max_attempts) throw;
            sleep(backoff);
        }
        backoff = std::min(backoff * policy.multiplier, policy.max_backoff_s);
    }
}

}  // namespace ltner::http
