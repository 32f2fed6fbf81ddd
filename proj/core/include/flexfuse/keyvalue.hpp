#pragma once

#include <map>
#include <string>
#include <string_view>

namespace flexfuse {

/// Flat `key=value` text, one pair per line. Blank lines and lines starting
/// with '#' are ignored; surrounding whitespace is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

std::size_t require_size(const KeyValues& kv, const std::string& key);
const std::string& require_value(const KeyValues& kv, const std::string& key);

}  // namespace flexfuse
