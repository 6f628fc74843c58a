#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace mactok {

/// Flat `key = value` text. Blank lines and lines starting with '#' are
/// ignored; a repeated key is an error.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<string>");
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

double parse_double(const std::string& key, const std::string& value);
int64_t parse_int(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace mactok
