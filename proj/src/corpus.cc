#include "cdst/corpus.h"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cdst/text.h"

namespace cdst {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing input file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::set<std::string> read_id_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing split list: " + path.string());
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    ids.insert(line.substr(first, last - first + 1));
  }
  return ids;
}

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

BeliefState state_from_metadata(const json& metadata, const SlotInventory& inventory) {
  BeliefState state(inventory);
  if (!metadata.is_object()) return state;
  for (const auto& [domain, sections] : metadata.items()) {
    if (!sections.is_object()) continue;
    for (const char* section : {"semi", "book"}) {
      auto it = sections.find(section);
      if (it == sections.end() || !it->is_object()) continue;
      for (const auto& [key, value] : it->items()) {
        if (key == "booked" || !value.is_string()) continue;
        std::string name = lowercase(domain) + "-" +
                           (std::string_view(section) == "book" ? "book " : "") +
                           lowercase(key);
        if (!inventory.contains(name)) continue;
        state.set(name, normalize_value(name, value.get<std::string>()));
      }
    }
  }
  return state;
}

Dialogue parse_dialogue(const std::string& id, const json& entry,
                        const SlotInventory& inventory) {
  const json& log = entry.at("log");
  if (!log.is_array() || log.empty()) throw std::runtime_error("empty log");
  if (log.size() % 2 != 0) throw std::runtime_error("log does not alternate user/system");
  Dialogue d;
  d.dialogue_id = id;
  for (std::size_t i = 0; i + 1 < log.size(); i += 2) {
    Turn t;
    t.turn_index = static_cast<int>(i / 2);
    t.user_utterance = normalize_text(log[i].at("text").get<std::string>());
    t.system_utterance = normalize_text(log[i + 1].at("text").get<std::string>());
    t.gold_state = state_from_metadata(log[i + 1].value("metadata", json::object()), inventory);
    d.turns.push_back(std::move(t));
  }
  return d;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Start of the last whole-word occurrence of `needle` in `text`, or npos.
std::size_t rfind_word(const std::string& text, const std::string& needle) {
  if (needle.empty()) return std::string::npos;
  std::size_t pos = text.rfind(needle);
  while (pos != std::string::npos) {
    const std::size_t end = pos + needle.size();
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    const bool right_ok = end == text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok) return pos;
    if (pos == 0) break;
    pos = text.rfind(needle, pos - 1);
  }
  return std::string::npos;
}

// Most recent occurrence of the value in the context (system side of a turn
// is more recent than its user side), then the current user utterance.
bool locate_antecedent(const Dialogue& d, int turn_index, const std::string& slot,
                       const std::string& value, CorefLabel* label) {
  const auto variants = value_variants(slot, value);
  auto search = [&](int turn, Speaker speaker) {
    const std::string& text = d.turns[turn].utterance(speaker);
    std::size_t best = std::string::npos;
    std::size_t best_len = 0;
    for (const auto& v : variants) {
      const std::size_t pos = rfind_word(text, v);
      if (pos == std::string::npos) continue;
      if (best == std::string::npos || pos > best || (pos == best && v.size() > best_len)) {
        best = pos;
        best_len = v.size();
      }
    }
    if (best == std::string::npos) return false;
    label->source_turn = turn;
    label->source_speaker = speaker;
    label->char_start = best;
    label->char_end = best + best_len;
    return true;
  };
  for (int k = turn_index - 1; k >= 0; --k) {
    if (search(k, Speaker::kSystem) || search(k, Speaker::kUser)) return true;
  }
  return search(turn_index, Speaker::kUser);
}

}  // namespace

std::string_view to_string(Speaker s) {
  return s == Speaker::kUser ? "user" : "system";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Speaker speaker_from_string(std::string_view s) {
  if (s == "user") return Speaker::kUser;
  if (s == "system") return Speaker::kSystem;
  throw std::invalid_argument("unknown speaker: " + std::string(s));
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev" || s == "val") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

// BeliefState ---------------------------------------------------------------

BeliefState::BeliefState(const SlotInventory& inventory) {
  for (const auto& s : inventory) values_.emplace(s.name(), std::string(kNoneValue));
}

const std::string& BeliefState::get(std::string_view slot) const {
  static const std::string none(kNoneValue);
  auto it = values_.find(slot);
  return it == values_.end() ? none : it->second;
}

void BeliefState::set(const std::string& slot, std::string value) {
  values_[slot] = std::move(value);
}

bool BeliefState::covers(const SlotInventory& inventory) const {
  return std::all_of(inventory.begin(), inventory.end(),
                     [&](const DomainSlot& s) { return values_.count(s.name()) > 0; });
}

bool operator==(const BeliefState& a, const BeliefState& b) {
  for (const auto& [slot, value] : a.values_) {
    if (b.get(slot) != value) return false;
  }
  for (const auto& [slot, value] : b.values_) {
    if (a.get(slot) != value) return false;
  }
  return true;
}

json BeliefState::to_json() const {
  json j = json::object();
  for (const auto& [slot, value] : values_) j[slot] = value;
  return j;
}

BeliefState BeliefState::from_json(const json& j) {
  BeliefState state;
  for (const auto& [slot, value] : j.items()) state.set(slot, value.get<std::string>());
  return state;
}

// Loading -------------------------------------------------------------------

json LoadReport::to_json() const {
  return {{"train", train}, {"dev", dev}, {"test", test},
          {"skipped", skipped}, {"warnings", warnings}};
}

std::vector<Dialogue> load_multiwoz(const std::string& data_dir, const SplitSpec& split_spec,
                                    const SlotInventory& inventory, LoadReport* report) {
  const fs::path dir(data_dir);
  if (!fs::is_directory(dir)) throw LoadError("not a directory: " + data_dir);
  const json data = read_json_file(dir / split_spec.data_file);
  const auto dev_ids = read_id_list(dir / split_spec.dev_list);
  const auto test_ids = read_id_list(dir / split_spec.test_list);
  if (!data.is_object()) throw LoadError("data file is not a JSON object");

  LoadReport local;
  std::vector<Dialogue> out;
  for (const auto& [id, entry] : data.items()) {
    Dialogue d;
    try {
      d = parse_dialogue(id, entry, inventory);
    } catch (const std::exception& e) {
      ++local.skipped;
      local.warnings.push_back("skipped malformed dialogue " + id + ": " + e.what());
      continue;
    }
    if (dev_ids.count(id)) {
      d.split = Split::kDev;
      ++local.dev;
    } else if (test_ids.count(id)) {
      d.split = Split::kTest;
      ++local.test;
    } else {
      d.split = Split::kTrain;
      ++local.train;
    }
    out.push_back(std::move(d));
  }
  for (const auto* ids : {&dev_ids, &test_ids}) {
    for (const auto& id : *ids) {
      if (!data.contains(id)) local.warnings.push_back("split list names unknown dialogue " + id);
    }
  }
  if (report) *report = std::move(local);
  return out;
}

// Coreference annotations ---------------------------------------------------

json CorefAttachReport::to_json() const {
  return {{"attached", attached},
          {"unknown_dialogue", unknown_dialogue},
          {"unknown_turn", unknown_turn},
          {"unknown_slot", unknown_slot},
          {"alignment_failures", alignment_failures},
          {"current_turn_antecedents", current_turn_antecedents},
          {"warnings", warnings}};
}

std::vector<Dialogue> attach_coref_annotations(std::vector<Dialogue> dialogues,
                                               const std::string& annotation_file,
                                               const SlotInventory& inventory,
                                               CorefAttachReport* report) {
  return attach_coref_annotations(std::move(dialogues), read_json_file(annotation_file),
                                  inventory, report);
}

std::vector<Dialogue> attach_coref_annotations(std::vector<Dialogue> dialogues,
                                               const json& annotations,
                                               const SlotInventory& inventory,
                                               CorefAttachReport* report) {
  CorefAttachReport local;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < dialogues.size(); ++i) by_id[dialogues[i].dialogue_id] = i;

  if (!annotations.is_object()) throw LoadError("coreference annotations must be a JSON object");
  for (const auto& [dialogue_id, turns] : annotations.items()) {
    auto found = by_id.find(dialogue_id);
    if (found == by_id.end()) {
      for (const auto& [key, entries] : turns.items()) local.unknown_dialogue += entries.size();
      local.warnings.push_back("annotation for unknown dialogue " + dialogue_id);
      continue;
    }
    Dialogue& d = dialogues[found->second];
    for (const auto& [turn_key, entries] : turns.items()) {
      int turn_index = -1;
      try {
        turn_index = std::stoi(turn_key);
      } catch (const std::exception&) {
      }
      if (turn_index < 0 || turn_index >= static_cast<int>(d.turns.size())) {
        local.unknown_turn += entries.size();
        local.warnings.push_back("annotation for unknown turn " + dialogue_id + "/" + turn_key);
        continue;
      }
      Turn& turn = d.turns[turn_index];
      for (const auto& entry : entries) {
        const std::string where = dialogue_id + "/" + turn_key;
        std::string slot;
        try {
          slot = entry.at("slot").get<std::string>();
        } catch (const json::exception&) {
          ++local.unknown_slot;
          local.warnings.push_back("annotation without slot at " + where);
          continue;
        }
        if (!inventory.contains(slot)) {
          ++local.unknown_slot;
          local.warnings.push_back("annotation for unknown slot " + slot + " at " + where);
          continue;
        }
        CorefLabel label;
        label.slot = slot;
        label.value = normalize_value(slot, entry.value("value", std::string()));
        bool aligned = false;
        if (entry.contains("char_start") && entry.contains("char_end")) {
          try {
            label.source_turn = entry.value("source_turn", turn_index);
            label.source_speaker = speaker_from_string(entry.value("source_speaker", std::string("user")));
            label.char_start = entry.at("char_start").get<std::size_t>();
            label.char_end = entry.at("char_end").get<std::size_t>();
            const bool visible =
                label.source_turn >= 0 && label.source_turn <= turn_index &&
                !(label.source_turn == turn_index && label.source_speaker == Speaker::kSystem);
            if (visible) {
              const std::string& text = d.turns[label.source_turn].utterance(label.source_speaker);
              aligned = label.char_start < label.char_end && label.char_end <= text.size() &&
                        normalize_value(slot, text.substr(label.char_start,
                                                          label.char_end - label.char_start)) ==
                            label.value;
            }
          } catch (const std::exception&) {
            aligned = false;
          }
        } else {
          aligned = label.value != kNoneValue &&
                    locate_antecedent(d, turn_index, slot, label.value, &label);
        }
        if (!aligned) {
          ++local.alignment_failures;
          local.warnings.push_back("alignment failure for " + slot + "=" + label.value + " at " + where);
          continue;
        }
        if (std::find(turn.coref_labels.begin(), turn.coref_labels.end(), label) !=
            turn.coref_labels.end()) {
          continue;
        }
        if (label.source_turn == turn_index) ++local.current_turn_antecedents;
        turn.coref_labels.push_back(std::move(label));
        ++local.attached;
      }
    }
  }
  if (report) *report = std::move(local);
  return dialogues;
}

// Statistics ----------------------------------------------------------------

json CorefStatistics::to_json() const {
  return {{"dialogues", dialogues},
          {"coref_dialogues", coref_dialogues},
          {"coref_dialogue_fraction", coref_dialogue_fraction},
          {"labels", labels},
          {"distinct_coref_slots", distinct_slots()},
          {"per_slot", per_slot}};
}

CorefStatistics coref_statistics(const std::vector<Dialogue>& dialogues) {
  CorefStatistics stats;
  stats.dialogues = dialogues.size();
  for (const auto& d : dialogues) {
    bool has_label = false;
    for (const auto& t : d.turns) {
      for (const auto& l : t.coref_labels) {
        has_label = true;
        ++stats.labels;
        ++stats.per_slot[l.slot];
      }
    }
    if (has_label) ++stats.coref_dialogues;
  }
  if (stats.dialogues > 0) {
    stats.coref_dialogue_fraction =
        static_cast<double>(stats.coref_dialogues) / static_cast<double>(stats.dialogues);
  }
  return stats;
}

// Serialization -------------------------------------------------------------

json dialogue_to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json labels = json::array();
    for (const auto& l : t.coref_labels) {
      labels.push_back({{"slot", l.slot},
                        {"value", l.value},
                        {"source_turn", l.source_turn},
                        {"source_speaker", to_string(l.source_speaker)},
                        {"char_start", l.char_start},
                        {"char_end", l.char_end}});
    }
    turns.push_back({{"turn_index", t.turn_index},
                     {"user", t.user_utterance},
                     {"system", t.system_utterance},
                     {"state", t.gold_state.to_json()},
                     {"coref", labels}});
  }
  return {{"dialogue_id", d.dialogue_id}, {"split", to_string(d.split)}, {"turns", turns}};
}

Dialogue dialogue_from_json(const json& j) {
  Dialogue d;
  d.dialogue_id = j.at("dialogue_id").get<std::string>();
  d.split = split_from_string(j.at("split").get<std::string>());
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.turn_index = jt.at("turn_index").get<int>();
    if (t.turn_index != static_cast<int>(d.turns.size())) {
      throw LoadError("non-consecutive turn_index in dialogue " + d.dialogue_id);
    }
    t.user_utterance = jt.at("user").get<std::string>();
    t.system_utterance = jt.value("system", std::string());
    t.gold_state = BeliefState::from_json(jt.at("state"));
    for (const auto& jl : jt.value("coref", json::array())) {
      CorefLabel l;
      l.slot = jl.at("slot").get<std::string>();
      l.value = jl.at("value").get<std::string>();
      l.source_turn = jl.at("source_turn").get<int>();
      l.source_speaker = speaker_from_string(jl.at("source_speaker").get<std::string>());
      l.char_start = jl.at("char_start").get<std::size_t>();
      l.char_end = jl.at("char_end").get<std::size_t>();
      t.coref_labels.push_back(std::move(l));
    }
    d.turns.push_back(std::move(t));
  }
  if (d.turns.empty()) throw LoadError("dialogue without turns: " + d.dialogue_id);
  return d;
}

void write_corpus(const std::string& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& d : dialogues) out << dialogue_to_json(d).dump() << '\n';
}

std::vector<Dialogue> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing corpus file: " + path);
  std::vector<Dialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(dialogue_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw LoadError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Dialogue> select_split(const std::vector<Dialogue>& dialogues, Split split) {
  std::vector<Dialogue> out;
  std::copy_if(dialogues.begin(), dialogues.end(), std::back_inserter(out),
               [&](const Dialogue& d) { return d.split == split; });
  return out;
}

}  // namespace cdst
