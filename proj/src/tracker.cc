#include "cdst/tracker.h"

#include <fstream>
#include <stdexcept>

#include "cdst/text.h"

namespace cdst {
namespace {

using nlohmann::json;

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

std::string_view to_string(MergePolicy p) {
  return p == MergePolicy::kCorefOverridesBase ? "coref-overrides-base" : "coref-fills-empty-only";
}

MergePolicy merge_policy_from_string(std::string_view s) {
  if (s == "coref-overrides-base") return MergePolicy::kCorefOverridesBase;
  if (s == "coref-fills-empty-only") return MergePolicy::kCorefFillsEmptyOnly;
  throw std::invalid_argument("unknown merge policy: " + std::string(s));
}

MergedState merge_states(const BeliefState& base, const TurnCorefPredictions& predictions,
                         const MergeRule& rule) {
  for (const auto& [slot, prediction] : predictions) {
    if (!base.assignments().count(slot)) {
      throw std::invalid_argument("coref prediction for slot outside the base state: " + slot);
    }
  }
  MergedState merged{base, {}};
  for (const auto& [slot, value] : base.assignments()) merged.provenance[slot] = Provenance::kBase;
  for (const auto& [slot, prediction] : predictions) {
    if (prediction.p_coref < rule.threshold || prediction.decoded.empty()) continue;
    if (rule.policy == MergePolicy::kCorefFillsEmptyOnly && base.get(slot) != kNoneValue) continue;
    merged.state.set(slot, prediction.decoded);
    merged.provenance[slot] = Provenance::kCoref;
  }
  return merged;
}

BeliefState apply_coref(const BeliefState& base, const TurnCorefPredictions& predictions,
                        const MergeRule& rule) {
  return merge_states(base, predictions, rule).state;
}

std::vector<MergedState> track_dialogue(const Dialogue& dialogue,
                                        const std::vector<BeliefState>& base_states,
                                        const std::vector<TurnCorefPredictions>& coref,
                                        const MergeRule& rule) {
  if (base_states.size() < dialogue.turns.size()) {
    throw std::invalid_argument("missing base prediction for a turn of " + dialogue.dialogue_id);
  }
  std::vector<MergedState> out;
  static const TurnCorefPredictions kNoPredictions;
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    out.push_back(merge_states(base_states[t], t < coref.size() ? coref[t] : kNoPredictions, rule));
  }
  return out;
}

std::vector<MergedState> track_dialogue(const Dialogue& dialogue,
                                        const std::vector<BeliefState>& base_states,
                                        const CdstModel& model, const MergeRule& rule) {
  if (base_states.size() < dialogue.turns.size()) {
    throw std::invalid_argument("missing base prediction for a turn of " + dialogue.dialogue_id);
  }
  std::vector<TurnCorefPredictions> coref;
  for (const auto& t : dialogue.turns) coref.push_back(model.predict_turn(dialogue, t.turn_index));
  return track_dialogue(dialogue, base_states, coref, rule);
}

BaseStates read_base_predictions(const std::string& path, const SlotInventory& inventory) {
  BaseStates out;
  for_each_json_line(path, [&](const json& j) {
    BeliefState state(inventory);
    for (const auto& [slot, value] : j.at("state").items()) {
      if (!inventory.contains(slot)) {
        throw std::invalid_argument("base prediction for slot outside the inventory: " + slot);
      }
      state.set(slot, normalize_value(slot, value.get<std::string>()));
    }
    out[{j.at("dialogue_id").get<std::string>(), j.at("turn_index").get<int>()}] = std::move(state);
  });
  return out;
}

void write_base_predictions(const std::string& path, const BaseStates& states) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& [key, state] : states) {
    out << json{{"dialogue_id", key.first}, {"turn_index", key.second}, {"state", state.to_json()}}
               .dump()
        << '\n';
  }
}

json prediction_record(const std::string& dialogue_id, int turn_index,
                       const TurnCorefPredictions& predictions, const std::string& manifest_hash) {
  json slots = json::object();
  for (const auto& [slot, p] : predictions) slots[slot] = p.to_json();
  return {{"dialogue_id", dialogue_id},
          {"turn_index", turn_index},
          {"manifest", manifest_hash},
          {"slots", slots}};
}

CorefPredictionTable read_coref_predictions(const std::string& path) {
  CorefPredictionTable out;
  for_each_json_line(path, [&](const json& j) {
    TurnCorefPredictions turn;
    for (const auto& [slot, p] : j.at("slots").items()) {
      turn.emplace(slot, CorefPrediction::from_json(slot, p));
    }
    out[{j.at("dialogue_id").get<std::string>(), j.at("turn_index").get<int>()}] = std::move(turn);
  });
  return out;
}

json merged_record(const std::string& dialogue_id, int turn_index, const MergedState& merged,
                   const std::string& manifest_hash) {
  json provenance = json::object();
  for (const auto& [slot, p] : merged.provenance) {
    provenance[slot] = p == Provenance::kBase ? "base" : "coref";
  }
  return {{"dialogue_id", dialogue_id},
          {"turn_index", turn_index},
          {"manifest", manifest_hash},
          {"state", merged.state.to_json()},
          {"provenance", provenance}};
}

std::vector<BeliefState> base_states_for(const Dialogue& dialogue, const BaseStates& table,
                                         const SlotInventory& inventory, bool allow_missing) {
  std::vector<BeliefState> out;
  for (const auto& t : dialogue.turns) {
    auto it = table.find({dialogue.dialogue_id, t.turn_index});
    if (it != table.end()) {
      out.push_back(it->second);
    } else if (allow_missing) {
      out.emplace_back(inventory);
    } else {
      throw std::invalid_argument("missing base prediction for " + dialogue.dialogue_id + " turn " +
                                  std::to_string(t.turn_index));
    }
  }
  return out;
}

}  // namespace cdst
