#ifndef CDST_TEXT_H_
#define CDST_TEXT_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cdst {

// Lowercases ASCII letters, collapses whitespace runs to a single space and
// trims both ends. Utterances are stored in this form; every character
// offset in the corpus refers to normalized text.
std::string normalize_text(std::string_view text);

// Canonical form of a slot value, following the label conventions of the
// published MultiWOZ trackers: normalize_text, then a fixed rewrite map
// ("center" -> "centre", "guesthouse" -> "guest house", time padding, the
// various spellings of "dontcare" and "none", spelled-out counts for
// numeric slots). `slot_name` is the canonical "domain-slot" name.
std::string normalize_value(std::string_view slot_name, std::string_view value);

// Surface spellings that normalize to `value` under normalize_value and that
// are worth searching for in text (the value itself comes first).
std::vector<std::string> value_variants(std::string_view slot_name,
                                        std::string_view value);

// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

inline constexpr std::string_view kNoneValue = "none";

}  // namespace cdst

#endif  // CDST_TEXT_H_
