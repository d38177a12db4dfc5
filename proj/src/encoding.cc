#include "cdst/encoding.h"

#include <algorithm>
#include <random>

#include "cdst/text.h"

namespace cdst {
namespace {

using nlohmann::json;

struct Piece {
  int id;
  TokenOrigin origin;
  Role role;
};

const CorefLabel* find_label(const Turn& turn, const std::string& slot_name) {
  for (const auto& l : turn.coref_labels) {
    if (l.slot == slot_name) return &l;
  }
  return nullptr;
}

}  // namespace

void InputConfig::validate() const {
  if (max_seq_length < 8) throw std::invalid_argument("max_seq_length must be at least 8");
}

json InputConfig::to_json() const {
  return {{"max_seq_length", max_seq_length},
          {"include_utterance", include_utterance},
          {"include_slot", include_slot},
          {"context_order", context_order == ContextOrder::kChronological ? "chronological"
                                                                          : "most-recent-first"},
          {"segment_scheme", segment_scheme == SegmentScheme::kTwo ? 2 : 3}};
}

InputConfig InputConfig::from_json(const json& j) {
  InputConfig c;
  c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
  c.include_utterance = j.value("include_utterance", c.include_utterance);
  c.include_slot = j.value("include_slot", c.include_slot);
  const std::string order = j.value("context_order", std::string("chronological"));
  if (order == "chronological") {
    c.context_order = ContextOrder::kChronological;
  } else if (order == "most-recent-first") {
    c.context_order = ContextOrder::kMostRecentFirst;
  } else {
    throw std::invalid_argument("unknown context_order: " + order);
  }
  const int scheme = j.value("segment_scheme", 2);
  if (scheme != 2 && scheme != 3) throw std::invalid_argument("segment_scheme must be 2 or 3");
  c.segment_scheme = scheme == 2 ? SegmentScheme::kTwo : SegmentScheme::kThree;
  c.validate();
  return c;
}

int EncodedExample::separator_count() const {
  return static_cast<int>(std::count(roles.begin(), roles.end(), Role::kSep));
}

std::vector<std::uint8_t> EncodedExample::span_candidates() const {
  std::vector<std::uint8_t> out(roles.size());
  for (std::size_t i = 0; i < roles.size(); ++i) {
    out[i] = roles[i] == Role::kUtterance || roles[i] == Role::kContext;
  }
  return out;
}

ExampleBuilder::ExampleBuilder(const SlotInventory& inventory, const Vocab& vocab,
                               InputConfig config)
    : inventory_(&inventory), vocab_(&vocab), tokenizer_(vocab), config_(config) {
  config_.validate();
}

EncodedExample ExampleBuilder::build_input(const Dialogue& dialogue, int turn_index,
                                           const DomainSlot& slot) const {
  if (turn_index < 0 || turn_index >= static_cast<int>(dialogue.turns.size())) {
    throw std::invalid_argument("turn index out of range for dialogue " + dialogue.dialogue_id);
  }
  inventory_->require(slot.name());

  EncodedExample ex;
  ex.dialogue_id = dialogue.dialogue_id;
  ex.turn_index = turn_index;
  ex.slot = slot;

  auto cut = [&](SourceText::Field field, int turn, const std::string& text, Role role) {
    ex.sources.push_back({field, turn, text});
    const int source = static_cast<int>(ex.sources.size()) - 1;
    std::vector<Piece> pieces;
    for (const auto& t : tokenizer_.tokenize(text)) pieces.push_back({t.id, {source, t.range}, role});
    return pieces;
  };

  const Turn& current = dialogue.turns[turn_index];
  std::vector<Piece> slot_pieces;
  std::vector<Piece> utterance_pieces;
  if (config_.include_slot) {
    slot_pieces = cut(SourceText::Field::kSlot, -1, slot.surface_form, Role::kSlot);
  }
  if (config_.include_utterance) {
    utterance_pieces = cut(SourceText::Field::kUserUtterance, turn_index, current.user_utterance,
                           Role::kUtterance);
  }

  const int mandatory = 2 + (config_.include_slot ? static_cast<int>(slot_pieces.size()) + 1 : 0) +
                        (config_.include_utterance ? static_cast<int>(utterance_pieces.size()) + 1 : 0);
  if (mandatory > config_.max_seq_length) {
    throw std::length_error("slot and current utterance need " + std::to_string(mandatory) +
                            " positions, max_seq_length is " +
                            std::to_string(config_.max_seq_length));
  }

  // Most recent pair first; each pair is user then system text.
  std::vector<std::vector<Piece>> pairs;
  int budget = config_.max_seq_length - mandatory;
  for (int k = turn_index - 1; k >= 0 && budget > 0; --k) {
    const int delimiter = pairs.empty() ? 0 : 1;
    if (budget - delimiter <= 0) break;
    std::vector<Piece> pair = cut(SourceText::Field::kUserUtterance, k,
                                  dialogue.turns[k].user_utterance, Role::kContext);
    auto system = cut(SourceText::Field::kSystemUtterance, k, dialogue.turns[k].system_utterance,
                      Role::kContext);
    pair.insert(pair.end(), system.begin(), system.end());
    const int room = budget - delimiter;
    if (static_cast<int>(pair.size()) > room) {
      pair.erase(pair.begin(), pair.end() - room);
      pairs.push_back(std::move(pair));
      break;
    }
    budget -= static_cast<int>(pair.size()) + delimiter;
    pairs.push_back(std::move(pair));
  }
  if (config_.context_order == ContextOrder::kChronological) {
    std::reverse(pairs.begin(), pairs.end());
  }

  const int context_segment = config_.segment_scheme == SegmentScheme::kTwo ? 1 : 2;
  auto emit = [&](int id, Role role, int segment, TokenOrigin origin) {
    ex.tokens.push_back(id);
    ex.roles.push_back(role);
    ex.segment_ids.push_back(segment);
    ex.attention_mask.push_back(1);
    ex.token_char_map.push_back(origin);
  };
  emit(vocab_->cls_id(), Role::kCls, 0, {});
  if (config_.include_slot) {
    for (const auto& p : slot_pieces) emit(p.id, p.role, 0, p.origin);
    emit(vocab_->sep_id(), Role::kSep, 0, {});
  }
  if (config_.include_utterance) {
    for (const auto& p : utterance_pieces) emit(p.id, p.role, 1, p.origin);
    emit(vocab_->sep_id(), Role::kSep, 1, {});
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0) emit(vocab_->turn_id(), Role::kTurnDelimiter, context_segment, {});
    for (const auto& p : pairs[i]) emit(p.id, p.role, context_segment, p.origin);
  }
  emit(vocab_->sep_id(), Role::kSep, context_segment, {});

  const CorefLabel* label = find_label(current, slot.name());
  if (label == nullptr) return ex;
  ex.gold_slot_type = SlotType::kCoref;

  const auto field = label->source_speaker == Speaker::kUser ? SourceText::Field::kUserUtterance
                                                             : SourceText::Field::kSystemUtterance;
  int source = -1;
  for (int s = 0; s < static_cast<int>(ex.sources.size()); ++s) {
    if (ex.sources[s].field == field && ex.sources[s].turn_index == label->source_turn) source = s;
  }
  if (source < 0) return ex;
  std::vector<int> positions;
  std::vector<CharRange> ranges;
  for (int i = 0; i < ex.size(); ++i) {
    if (ex.token_char_map[i].source == source) {
      positions.push_back(i);
      ranges.push_back(ex.token_char_map[i].range);
    }
  }
  try {
    const TokenSpan local = char_span_to_token_span(ex.sources[source].text, label->char_start,
                                                    label->char_end, ranges);
    ex.gold_span = TokenSpan{positions[local.start], positions[local.end]};
  } catch (const std::exception&) {
    // antecedent truncated away
  }
  return ex;
}

void for_each_example(const std::vector<Dialogue>& dialogues, const ExampleBuilder& builder,
                      const SamplingPolicy& sampling,
                      const std::function<void(EncodedExample&&)>& visit) {
  const SlotInventory& inventory = builder.inventory();
  if (sampling.kind == SamplingPolicy::Kind::kAll) {
    for (const auto& d : dialogues) {
      for (const auto& t : d.turns) {
        for (const auto& s : inventory) visit(builder.build_input(d, t.turn_index, s));
      }
    }
    return;
  }

  std::vector<std::uint8_t> keep;
  std::size_t positives = 0;
  for (std::size_t di = 0; di < dialogues.size(); ++di) {
    for (const auto& t : dialogues[di].turns) {
      for (std::size_t si = 0; si < inventory.size(); ++si) {
        const bool coref = find_label(t, inventory.at(si).name()) != nullptr;
        keep.push_back(coref);
        if (coref) ++positives;
      }
    }
  }
  // Partial Fisher-Yates over the negative positions.
  std::vector<std::size_t> negative_slots;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) negative_slots.push_back(i);
  }
  const std::size_t wanted = std::min(
      negative_slots.size(), positives * static_cast<std::size_t>(std::max(0, sampling.negatives_per_positive)));
  std::mt19937_64 rng(sampling.seed);
  for (std::size_t i = 0; i < wanted; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (negative_slots.size() - i));
    std::swap(negative_slots[i], negative_slots[j]);
    keep[negative_slots[i]] = 1;
  }

  std::size_t flat = 0;
  for (const auto& d : dialogues) {
    for (const auto& t : d.turns) {
      for (const auto& s : inventory) {
        if (keep[flat++]) visit(builder.build_input(d, t.turn_index, s));
      }
    }
  }
}

std::vector<EncodedExample> batch_examples(const std::vector<Dialogue>& dialogues,
                                           const ExampleBuilder& builder,
                                           const SamplingPolicy& sampling) {
  std::vector<EncodedExample> out;
  for_each_example(dialogues, builder, sampling,
                   [&](EncodedExample&& ex) { out.push_back(std::move(ex)); });
  return out;
}

std::string decode_span_to_text(const EncodedExample& example, int token_start, int token_end) {
  if (token_start < 0 || token_end >= example.size() || token_start > token_end) {
    throw SpanDecodeError("span indices out of range");
  }
  const int source = example.token_char_map[token_start].source;
  for (int i = token_start; i <= token_end; ++i) {
    const Role role = example.roles[i];
    if (role != Role::kUtterance && role != Role::kContext) {
      throw SpanDecodeError("span covers a special token or the slot segment");
    }
    if (example.token_char_map[i].source != source) {
      throw SpanDecodeError("span crosses an utterance boundary");
    }
  }
  const std::string& text = example.sources[source].text;
  const std::size_t begin = example.token_char_map[token_start].range.begin;
  const std::size_t end = example.token_char_map[token_end].range.end;
  return normalize_value(example.slot.name(), text.substr(begin, end - begin));
}

}  // namespace cdst
