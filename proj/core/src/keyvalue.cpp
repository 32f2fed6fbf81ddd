#include "flexfuse/keyvalue.hpp"

#include <charconv>

#include "flexfuse/error.hpp"

namespace flexfuse {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw InvalidArgument("line " + std::to_string(line_no) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidArgument("line " + std::to_string(line_no) + ": empty key");
    kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

const std::string& require_value(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw InvalidArgument("missing key '" + key + "'");
  return it->second;
}

std::size_t require_size(const KeyValues& kv, const std::string& key) {
  const auto& v = require_value(kv, key);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw InvalidArgument("key '" + key + "' is not a non-negative integer: " + v);
  return out;
}

}  // namespace flexfuse
