#include "ltner/http.hpp"

#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "ltner/errors.hpp"

namespace ltner::http {

Response post_json(const std::string& base_url, const std::string& path, const std::string& body,
                   const std::string& bearer_token, std::chrono::seconds timeout) {
    // base_url is scheme://host[:port][/prefix]; httplib wants the prefix in the path.
    std::string host = base_url, prefix;
    if (auto scheme = base_url.find("://"); scheme != std::string::npos) {
        if (auto slash = base_url.find('/', scheme + 3); slash != std::string::npos) {
            host = base_url.substr(0, slash);
            prefix = base_url.substr(slash);
        }
    }
    if (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client cli(host);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);

    auto res = cli.Post(prefix + path, headers, body, "application/json");
    if (!res) throw BackendError("transport failure: " + httplib::to_string(res.error()), true);

    Response out{res->status, res->body, std::nullopt};
    if (res->has_header("Retry-After")) {
        const std::string v = res->get_header_value("Retry-After");
        char* end = nullptr;
        double s = std::strtod(v.c_str(), &end);
        if (end != v.c_str() && s >= 0) out.retry_after_s = s;
    }
    return out;
}

Sleeper real_sleeper() {
    return [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

}  // namespace ltner::http
