#ifndef CDST_ENCODING_H_
#define CDST_ENCODING_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/slots.h"
#include "cdst/tokenizer.h"
#include "json.hpp"

namespace cdst {

enum class ContextOrder { kChronological, kMostRecentFirst };

// kTwo: specials/slot = 0, utterance and context = 1 (BERT type vocabulary
// of size 2). kThree: context = 2.
enum class SegmentScheme { kTwo, kThree };

struct InputConfig {
  int max_seq_length = 512;
  bool include_utterance = true;
  bool include_slot = true;
  ContextOrder context_order = ContextOrder::kChronological;
  SegmentScheme segment_scheme = SegmentScheme::kTwo;

  void validate() const;
  nlohmann::json to_json() const;
  static InputConfig from_json(const nlohmann::json& j);
  friend bool operator==(const InputConfig&, const InputConfig&) = default;
};

// What a token position holds.
enum class Role : std::uint8_t { kCls, kSep, kSlot, kUtterance, kContext, kTurnDelimiter };

enum class SlotType : int { kNone = 0, kCoref = 1 };

// One text a token was cut from.
struct SourceText {
  enum class Field : std::uint8_t { kSlot, kUserUtterance, kSystemUtterance };
  Field field = Field::kSlot;
  int turn_index = -1;
  std::string text;
};

// Position of a token inside `EncodedExample::sources`; source = -1 for
// special tokens.
struct TokenOrigin {
  int source = -1;
  CharRange range;
};

class SpanDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Encoder input for one (turn, domain-slot) pair:
//   [CLS] slot [SEP] user-utterance [SEP] context [SEP]
// with the slot and utterance segments (and their separators) omitted by
// the ablation switches.
struct EncodedExample {
  std::string dialogue_id;
  int turn_index = 0;
  DomainSlot slot;
  std::vector<int> tokens;
  std::vector<int> segment_ids;
  std::vector<Role> roles;
  std::vector<std::uint8_t> attention_mask;
  SlotType gold_slot_type = SlotType::kNone;
  std::optional<TokenSpan> gold_span;
  std::vector<TokenOrigin> token_char_map;
  std::vector<SourceText> sources;

  int size() const { return static_cast<int>(tokens.size()); }
  int separator_count() const;
  // Positions a span may start or end on (utterance and context tokens).
  std::vector<std::uint8_t> span_candidates() const;
};

class ExampleBuilder {
 public:
  ExampleBuilder(const SlotInventory& inventory, const Vocab& vocab, InputConfig config);

  // Throws std::invalid_argument for an unknown slot or out-of-range turn
  // and std::length_error when the slot and utterance alone exceed
  // max_seq_length. The context is truncated oldest turn first; an
  // antecedent lost to truncation leaves gold_span empty.
  EncodedExample build_input(const Dialogue& dialogue, int turn_index,
                             const DomainSlot& slot) const;

  const InputConfig& config() const { return config_; }
  const SlotInventory& inventory() const { return *inventory_; }
  const Vocab& vocab() const { return *vocab_; }

 private:
  const SlotInventory* inventory_;
  const Vocab* vocab_;
  WordPieceTokenizer tokenizer_;
  InputConfig config_;
};

struct SamplingPolicy {
  enum class Kind { kAll, kBalanced };
  Kind kind = Kind::kAll;
  // kBalanced keeps every coref example plus this many sampled none
  // examples per coref example.
  int negatives_per_positive = 3;
  std::uint64_t seed = 0;

  static SamplingPolicy all() { return {}; }
  static SamplingPolicy balanced(int ratio, std::uint64_t seed) {
    return {Kind::kBalanced, ratio, seed};
  }
};

// Visits the admitted (dialogue, turn, slot) examples in corpus order.
void for_each_example(const std::vector<Dialogue>& dialogues, const ExampleBuilder& builder,
                      const SamplingPolicy& sampling,
                      const std::function<void(EncodedExample&&)>& visit);

std::vector<EncodedExample> batch_examples(const std::vector<Dialogue>& dialogues,
                                           const ExampleBuilder& builder,
                                           const SamplingPolicy& sampling);

// Normalized source text under [token_start, token_end]; throws
// SpanDecodeError when the span touches special tokens, the slot segment,
// or crosses an utterance boundary.
std::string decode_span_to_text(const EncodedExample& example, int token_start, int token_end);

}  // namespace cdst

#endif  // CDST_ENCODING_H_
