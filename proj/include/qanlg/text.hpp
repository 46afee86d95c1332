#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qanlg {

// Lowercases and separates punctuation into its own tokens. Placeholder tokens
// (uppercase slot type + "_" + index) are kept verbatim.
std::vector<std::string> tokenize(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");
std::string normalize_text(std::string_view text);

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::string trim(std::string_view s);

struct Placeholder {
  std::string type_key;  // uppercase slot type
  std::size_t index = 0;  // 1-based
};

std::string make_placeholder(std::string_view slot_type, std::size_t index);
std::optional<Placeholder> parse_placeholder(std::string_view token);
bool is_placeholder(std::string_view token);

// 64-bit FNV-1a, used for dataset fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace qanlg
