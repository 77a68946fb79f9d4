#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rubricforge/errors.hpp"

namespace rforge {

using json = nlohmann::json;

namespace detail {

// Span of the balanced {...} starting at `start`, honoring string literals
// and escapes. nullopt when the braces never balance.
inline std::optional<std::size_t> balanced_object_end(std::string_view text,
                                                      std::size_t start) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      --depth;
      if (depth == 0) return i;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// First balanced top-level JSON object in `content`, tolerating surrounding
// prose and code fences. Throws DecodeError when none parses.
inline json extract_json_object(std::string_view content) {
  for (std::size_t pos = content.find('{'); pos != std::string_view::npos;
       pos = content.find('{', pos + 1)) {
    auto end = detail::balanced_object_end(content, pos);
    if (!end) continue;
    auto candidate = content.substr(pos, *end - pos + 1);
    json parsed = json::parse(candidate, /*cb=*/nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  throw DecodeError("no balanced JSON object found in reply");
}

}  // namespace rforge
