#pragma once

#include <string>
#include <string_view>

namespace edd {

/// Hex SHA-1 of `data`.
std::string sha1_hex(std::string_view data);

/// Git blob id of `content`: SHA-1 over "blob <size>\0" + content.
std::string content_hash(std::string_view content);

}  // namespace edd
