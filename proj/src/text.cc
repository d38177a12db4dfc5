#include "cdst/text.h"

#include <array>
#include <cctype>
#include <cstdio>
#include <utility>

namespace cdst {
namespace {

constexpr std::array<std::pair<std::string_view, std::string_view>, 20> kGeneralMap = {{
    {"", "none"},
    {"not mentioned", "none"},
    {"not men", "none"},
    {"not given", "none"},
    {"dont care", "dontcare"},
    {"don't care", "dontcare"},
    {"do n't care", "dontcare"},
    {"do nt care", "dontcare"},
    {"does not care", "dontcare"},
    {"doesn't care", "dontcare"},
    {"any", "dontcare"},
    {"center", "centre"},
    {"city center", "centre"},
    {"city centre", "centre"},
    {"guesthouse", "guest house"},
    {"guesthouses", "guest house"},
    {"guest houses", "guest house"},
    {"moderately", "moderate"},
    {"mode", "moderate"},
    {"moderate -ly", "moderate"},
}};

constexpr std::array<std::string_view, 11> kNumberWords = {
    "zero", "one", "two",   "three", "four", "five",
    "six",  "seven", "eight", "nine", "ten"};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

bool is_numeric_slot(std::string_view slot_name) {
  return ends_with(slot_name, "book people") ||
         ends_with(slot_name, "book stay") || ends_with(slot_name, "-stars");
}

bool is_boolean_slot(std::string_view slot_name) {
  return ends_with(slot_name, "-parking") || ends_with(slot_name, "-internet");
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// "5:30" -> "05:30", "17.45" -> "17:45".
std::string pad_time(std::string v) {
  if (v.size() == 4 && is_digit(v[0]) && v[1] == ':' && is_digit(v[2]) &&
      is_digit(v[3])) {
    return "0" + v;
  }
  if (v.size() == 5 && is_digit(v[0]) && is_digit(v[1]) && v[2] == '.' &&
      is_digit(v[3]) && is_digit(v[4])) {
    v[2] = ':';
  }
  return v;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string normalize_value(std::string_view slot_name, std::string_view value) {
  std::string v = normalize_text(value);
  for (const auto& [from, to] : kGeneralMap) {
    if (v == from) {
      v = std::string(to);
      break;
    }
  }
  if (is_boolean_slot(slot_name)) {
    if (v == "free" || v == "y") return "yes";
    if (v == "n") return "no";
  }
  if (is_numeric_slot(slot_name)) {
    for (std::size_t i = 0; i < kNumberWords.size(); ++i) {
      if (v == kNumberWords[i]) return std::to_string(i);
    }
  }
  return pad_time(std::move(v));
}

std::vector<std::string> value_variants(std::string_view slot_name,
                                        std::string_view value) {
  const std::string canonical = normalize_value(slot_name, value);
  std::vector<std::string> out{canonical};
  auto add = [&](std::string_view candidate) {
    std::string c(candidate);
    if (normalize_value(slot_name, c) != canonical) return;
    for (const auto& existing : out) {
      if (existing == c) return;
    }
    out.push_back(std::move(c));
  };
  for (const auto& [from, to] : kGeneralMap) {
    if (to == canonical && !from.empty()) add(from);
  }
  if (is_numeric_slot(slot_name)) {
    for (const auto& word : kNumberWords) add(word);
  }
  if (is_boolean_slot(slot_name) && canonical == "yes") add("free");
  if (canonical.size() == 5 && canonical[0] == '0' && canonical[2] == ':') {
    add(canonical.substr(1));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace cdst
