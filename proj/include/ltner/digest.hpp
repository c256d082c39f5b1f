#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ltner {

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Compact dump with object keys sorted at every level.
std::string canonical_dump(const nlohmann::json& j);

}  // namespace ltner
