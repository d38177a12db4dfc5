#include "cdst/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace cdst {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

}  // namespace

std::vector<CharRange> basic_tokenize(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    if (is_punct(text[i])) {
      out.push_back({i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j]) && !is_punct(text[j])) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

// Vocab ----------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (int i = 0; i < size(); ++i) index_.emplace(tokens_[i], i);
  auto special = [&](std::string_view name) {
    auto id = find(name);
    if (!id) throw std::invalid_argument("vocabulary lacks " + std::string(name));
    return *id;
  };
  pad_ = special(kPad);
  unk_ = special(kUnk);
  cls_ = special(kCls);
  sep_ = special(kSep);
  if (auto t = find(kTurn)) {
    turn_ = *t;
  } else if (auto u = find("[unused0]")) {
    turn_ = *u;
  } else {
    turn_ = sep_;
  }
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::build(const std::vector<std::string>& texts, int min_count) {
  std::map<std::string, int> counts;
  std::set<char> chars;
  for (const auto& text : texts) {
    for (const auto& r : basic_tokenize(text)) {
      ++counts[std::string(text.substr(r.begin, r.end - r.begin))];
      for (std::size_t i = r.begin; i < r.end; ++i) chars.insert(text[i]);
    }
  }
  std::vector<std::string> tokens = {std::string(kPad), std::string(kUnk), std::string(kCls),
                                     std::string(kSep), std::string(kMask), std::string(kTurn)};
  for (char c : chars) tokens.emplace_back(1, c);
  for (char c : chars) tokens.push_back("##" + std::string(1, c));
  std::vector<std::pair<std::string, int>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::string> seen(tokens.begin(), tokens.end());
  for (const auto& [word, count] : words) {
    if (count < min_count || seen.count(word)) continue;
    seen.insert(word);
    tokens.push_back(word);
  }
  return Vocab(std::move(tokens));
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// WordPiece ------------------------------------------------------------------

std::vector<Token> WordPieceTokenizer::tokenize(std::string_view text) const {
  std::vector<Token> out;
  std::string candidate;
  for (const auto& word : basic_tokenize(text)) {
    const std::size_t len = word.end - word.begin;
    if (len > kMaxWordChars) {
      out.push_back({vocab_->unk_id(), word});
      continue;
    }
    std::vector<Token> pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < len) {
      std::size_t end = len;
      std::optional<int> match;
      while (start < end) {
        candidate = start > 0 ? "##" : "";
        candidate.append(text.substr(word.begin + start, end - start));
        match = vocab_->find(candidate);
        if (match) break;
        --end;
      }
      if (!match) {
        bad = true;
        break;
      }
      pieces.push_back({*match, {word.begin + start, word.begin + end}});
      start = end;
    }
    if (bad) {
      out.push_back({vocab_->unk_id(), word});
    } else {
      out.insert(out.end(), pieces.begin(), pieces.end());
    }
  }
  return out;
}

TokenSpan char_span_to_token_span(std::string_view text, std::size_t char_start,
                                  std::size_t char_end, std::span<const CharRange> tokens) {
  if (char_start >= char_end) throw std::invalid_argument("empty character span");
  if (char_end > text.size()) throw std::out_of_range("character span outside text bounds");
  bool overlaps = false;
  for (const auto& t : tokens) {
    if (t.begin < char_end && t.end > char_start) {
      overlaps = true;
      break;
    }
  }
  if (!overlaps) throw std::invalid_argument("character span covers no token");
  int first = -1;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (tokens[i].begin <= char_start) first = i;
  }
  int last = -1;
  for (int i = static_cast<int>(tokens.size()) - 1; i >= 0; --i) {
    if (tokens[i].end >= char_end) last = i;
  }
  if (first < 0 || last < 0 || last < first) {
    throw std::invalid_argument("character span is not covered by the tokenization");
  }
  return {first, last};
}

}  // namespace cdst
