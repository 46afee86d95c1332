#include "qanlg/text.hpp"

#include <cctype>
#include <cstdio>

namespace qanlg {

namespace {

bool is_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '(': case ')': case '"': case '[': case ']':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (const std::string& raw : split_whitespace(text)) {
    if (is_placeholder(raw)) {
      out.push_back(raw);
      continue;
    }
    std::string cur;
    for (char c : raw) {
      if (is_punct(c)) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        out.emplace_back(1, c);
      } else {
        cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join(tokenize(text)); }

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string make_placeholder(std::string_view slot_type, std::size_t index) {
  return to_upper(slot_type) + "_" + std::to_string(index);
}

std::optional<Placeholder> parse_placeholder(std::string_view token) {
  const auto us = token.rfind('_');
  if (us == std::string_view::npos || us == 0 || us + 1 >= token.size()) return std::nullopt;
  const std::string_view type = token.substr(0, us);
  const std::string_view digits = token.substr(us + 1);
  if (digits[0] == '0') return std::nullopt;
  std::size_t index = 0;
  for (char c : digits) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    index = index * 10 + static_cast<std::size_t>(c - '0');
  }
  bool has_upper = false;
  for (char c : type) {
    if (std::islower(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c)))
      return std::nullopt;
    has_upper = has_upper || std::isupper(static_cast<unsigned char>(c));
  }
  if (!has_upper) return std::nullopt;
  return Placeholder{std::string(type), index};
}

bool is_placeholder(std::string_view token) { return parse_placeholder(token).has_value(); }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace qanlg
