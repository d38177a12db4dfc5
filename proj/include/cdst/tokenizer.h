#ifndef CDST_TOKENIZER_H_
#define CDST_TOKENIZER_H_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cdst {

// Half-open character range [begin, end).
struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

// Inclusive token range [start, end].
struct TokenSpan {
  int start = 0;
  int end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Token {
  int id = 0;
  CharRange range;
};

// Whitespace and punctuation splitting; each ASCII punctuation character is
// its own word.
std::vector<CharRange> basic_tokenize(std::string_view text);

// BERT-style vocabulary, one token per line. Continuation pieces carry the
// "##" prefix.
class Vocab {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::string_view kMask = "[MASK]";
  // Turn delimiter in the context segment. Pretrained BERT vocabularies do
  // not have it, so "[unused0]" stands in.
  static constexpr std::string_view kTurn = "[TURN]";

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  // Specials, every single character seen (plain and "##"-prefixed) and every
  // basic-tokenized word occurring at least `min_count` times. Deterministic:
  // words are ordered by descending count, then lexicographically.
  static Vocab build(const std::vector<std::string>& texts, int min_count = 1);

  int size() const { return static_cast<int>(tokens_.size()); }
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int turn_id() const { return turn_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, turn_ = 0;
};

// Greedy longest-match-first WordPiece with character offsets. A word that
// cannot be pieced together becomes a single [UNK] covering the whole word.
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(const Vocab& vocab) : vocab_(&vocab) {}

  std::vector<Token> tokenize(std::string_view text) const;
  const Vocab& vocab() const { return *vocab_; }

 private:
  const Vocab* vocab_;
  static constexpr std::size_t kMaxWordChars = 100;
};

// Minimal token range whose character cover [tokens[start].begin,
// tokens[end].end) contains [char_start, char_end). Throws
// std::out_of_range for a span outside the text and std::invalid_argument
// for an empty span or one lying entirely in untokenized whitespace.
TokenSpan char_span_to_token_span(std::string_view text, std::size_t char_start,
                                  std::size_t char_end, std::span<const CharRange> tokens);

}  // namespace cdst

#endif  // CDST_TOKENIZER_H_
