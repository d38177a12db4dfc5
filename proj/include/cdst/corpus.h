#ifndef CDST_CORPUS_H_
#define CDST_CORPUS_H_

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cdst/slots.h"
#include "json.hpp"

namespace cdst {

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Speaker { kUser, kSystem };
enum class Split { kTrain, kDev, kTest };

std::string_view to_string(Speaker s);
std::string_view to_string(Split s);
Speaker speaker_from_string(std::string_view s);
Split split_from_string(std::string_view s);

// Slot -> value map over the full inventory. Unfilled slots hold "none";
// a slot absent from the map reads as "none" as well.
class BeliefState {
 public:
  BeliefState() = default;
  explicit BeliefState(const SlotInventory& inventory);

  const std::string& get(std::string_view slot) const;
  void set(const std::string& slot, std::string value);
  const std::map<std::string, std::string, std::less<>>& assignments() const {
    return values_;
  }
  bool covers(const SlotInventory& inventory) const;

  // Exact match on every slot, "none" and absent being equal.
  friend bool operator==(const BeliefState& a, const BeliefState& b);

  nlohmann::json to_json() const;
  static BeliefState from_json(const nlohmann::json& j);

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

// An antecedent for a coreferred slot. Offsets index the normalized text of
// the utterance (source_turn, source_speaker).
struct CorefLabel {
  std::string slot;  // canonical domain-slot name
  std::string value;
  int source_turn = 0;
  Speaker source_speaker = Speaker::kUser;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  friend bool operator==(const CorefLabel&, const CorefLabel&) = default;
};

struct Turn {
  int turn_index = 0;
  std::string user_utterance;
  std::string system_utterance;
  BeliefState gold_state;
  std::vector<CorefLabel> coref_labels;

  const std::string& utterance(Speaker s) const {
    return s == Speaker::kUser ? user_utterance : system_utterance;
  }
};

struct Dialogue {
  std::string dialogue_id;
  Split split = Split::kTrain;
  std::vector<Turn> turns;
};

// File names inside a MultiWOZ 2.1 release directory.
struct SplitSpec {
  std::string data_file = "data.json";
  std::string dev_list = "valListFile.txt";
  std::string test_list = "testListFile.txt";
};

struct LoadReport {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// Reads data.json plus the dev/test list files; every other dialogue is
// training data. Text is normalized and gold states are read from the system
// turn metadata restricted to `inventory`. Missing files throw LoadError,
// malformed dialogues are skipped and counted in `report`.
std::vector<Dialogue> load_multiwoz(const std::string& data_dir,
                                    const SplitSpec& split_spec,
                                    const SlotInventory& inventory,
                                    LoadReport* report = nullptr);

struct CorefAttachReport {
  std::size_t attached = 0;
  std::size_t unknown_dialogue = 0;
  std::size_t unknown_turn = 0;
  std::size_t unknown_slot = 0;
  std::size_t alignment_failures = 0;
  // Attached labels whose antecedent is in the labeled turn's own user
  // utterance.
  std::size_t current_turn_antecedents = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// Annotation file layout:
//   {"<dialogue_id>": {"<turn_index>": [{"slot", "value",
//       "source_turn"?, "source_speaker"?, "char_start"?, "char_end"?}]}}
// Entries without offsets are resolved to the most recent occurrence of the
// value in the dialogue context, falling back to the current user utterance.
std::vector<Dialogue> attach_coref_annotations(std::vector<Dialogue> dialogues,
                                               const std::string& annotation_file,
                                               const SlotInventory& inventory,
                                               CorefAttachReport* report = nullptr);
std::vector<Dialogue> attach_coref_annotations(std::vector<Dialogue> dialogues,
                                               const nlohmann::json& annotations,
                                               const SlotInventory& inventory,
                                               CorefAttachReport* report = nullptr);

struct CorefStatistics {
  std::size_t dialogues = 0;
  std::size_t coref_dialogues = 0;
  double coref_dialogue_fraction = 0.0;
  std::size_t labels = 0;
  std::map<std::string, std::size_t> per_slot;

  std::size_t distinct_slots() const { return per_slot.size(); }
  nlohmann::json to_json() const;
};

CorefStatistics coref_statistics(const std::vector<Dialogue>& dialogues);

// Internal corpus format: JSON lines, one dialogue per line.
nlohmann::json dialogue_to_json(const Dialogue& d);
Dialogue dialogue_from_json(const nlohmann::json& j);
void write_corpus(const std::string& path, const std::vector<Dialogue>& dialogues);
std::vector<Dialogue> read_corpus(const std::string& path);

std::vector<Dialogue> select_split(const std::vector<Dialogue>& dialogues, Split split);

}  // namespace cdst

#endif  // CDST_CORPUS_H_
