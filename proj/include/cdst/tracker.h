#ifndef CDST_TRACKER_H_
#define CDST_TRACKER_H_

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/model.h"
#include "cdst/slots.h"
#include "json.hpp"

namespace cdst {

enum class MergePolicy { kCorefOverridesBase, kCorefFillsEmptyOnly };

std::string_view to_string(MergePolicy p);
MergePolicy merge_policy_from_string(std::string_view s);

struct MergeRule {
  MergePolicy policy = MergePolicy::kCorefOverridesBase;
  double threshold = 0.5;
};

using TurnCorefPredictions = std::map<std::string, CorefPrediction>;

enum class Provenance { kBase, kCoref };

struct MergedState {
  BeliefState state;
  std::map<std::string, Provenance> provenance;
};

// A slot takes the coref value when p_coref >= rule.threshold and its span
// decoded to text; under kCorefFillsEmptyOnly only if the base value is
// "none". Everything else keeps the base value. Throws
// std::invalid_argument when a prediction names a slot the base state does
// not cover.
MergedState merge_states(const BeliefState& base, const TurnCorefPredictions& predictions,
                         const MergeRule& rule);
BeliefState apply_coref(const BeliefState& base, const TurnCorefPredictions& predictions,
                        const MergeRule& rule);

// One merged state per turn. Throws std::invalid_argument when a turn lacks
// a base state.
std::vector<MergedState> track_dialogue(const Dialogue& dialogue,
                                        const std::vector<BeliefState>& base_states,
                                        const std::vector<TurnCorefPredictions>& coref,
                                        const MergeRule& rule);
std::vector<MergedState> track_dialogue(const Dialogue& dialogue,
                                        const std::vector<BeliefState>& base_states,
                                        const CdstModel& model, const MergeRule& rule);

// Keyed by (dialogue_id, turn_index).
using TurnKey = std::pair<std::string, int>;
using BaseStates = std::map<TurnKey, BeliefState>;
using CorefPredictionTable = std::map<TurnKey, TurnCorefPredictions>;

// Base-tracker file: JSON lines {dialogue_id, turn_index, state}. Missing
// slots read as "none"; slots outside the inventory are an error.
BaseStates read_base_predictions(const std::string& path, const SlotInventory& inventory);
void write_base_predictions(const std::string& path, const BaseStates& states);

// Coref prediction file: JSON lines {dialogue_id, turn_index, manifest,
// slots: {name: {p_coref, span, decoded, value}}}.
nlohmann::json prediction_record(const std::string& dialogue_id, int turn_index,
                                 const TurnCorefPredictions& predictions,
                                 const std::string& manifest_hash);
CorefPredictionTable read_coref_predictions(const std::string& path);

// Merged file: the base schema plus {provenance: {slot: "base"|"coref"}}.
nlohmann::json merged_record(const std::string& dialogue_id, int turn_index,
                             const MergedState& merged, const std::string& manifest_hash);

// Base states for every turn of `dialogues`, all "none" where the table has
// no entry when `allow_missing`; otherwise a missing turn throws.
std::vector<BeliefState> base_states_for(const Dialogue& dialogue, const BaseStates& table,
                                         const SlotInventory& inventory, bool allow_missing);

}  // namespace cdst

#endif  // CDST_TRACKER_H_
