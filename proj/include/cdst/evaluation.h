#ifndef CDST_EVALUATION_H_
#define CDST_EVALUATION_H_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/model.h"
#include "cdst/tracker.h"
#include "cdst/training.h"
#include "json.hpp"

namespace cdst {

// Fraction of turns whose predicted state equals gold on every slot
// ("none" and absent are equal). 0 for empty input; throws
// std::invalid_argument on misaligned lengths.
double jga(std::span<const BeliefState> predicted, std::span<const BeliefState> gold);

// Fraction of (turn, slot) pairs over `inventory` that match.
double slot_accuracy(std::span<const BeliefState> predicted, std::span<const BeliefState> gold,
                     const SlotInventory& inventory);

struct SlotCounts {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

// For every slot with at least one gold coref instance: how often the
// predicted value equals the gold value. A missing prediction counts as
// wrong.
std::map<std::string, SlotCounts> per_slot_coref_counts(const CorefPredictionTable& predictions,
                                                        const std::vector<Dialogue>& gold);
std::map<std::string, double> per_slot_coref_accuracy(const CorefPredictionTable& predictions,
                                                      const std::vector<Dialogue>& gold);

struct EvalReport {
  // "cdst-standalone" (merge into empty base states) or "merged".
  std::string mode = "cdst-standalone";
  std::string merge_policy;
  double threshold = 0.5;
  double jga = 0.0;
  double slot_accuracy = 0.0;
  // Over every (turn, slot): coref decision vs presence of a gold label.
  double coref_slot_type_accuracy = 0.0;
  // Over gold coref instances: retrieved text equals gold, ignoring the
  // classification decision.
  double coref_span_exact_match = 0.0;
  // Over gold coref instances: emitted value equals gold.
  double coref_value_accuracy = 0.0;
  std::map<std::string, double> per_slot_coref_accuracy;
  std::map<std::string, SlotCounts> per_slot_coref_counts;
  std::size_t turn_count = 0;
  std::size_t coref_instances = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
  std::string table() const;
  // slot,correct,total,accuracy
  std::string per_slot_csv() const;
};

// Scores coref predictions against gold dialogues. With `base` the
// predictions are merged into the base tracker's states under `rule`;
// without it they are merged into empty states (cdst-standalone).
EvalReport evaluate(const std::vector<Dialogue>& gold, const CorefPredictionTable& predictions,
                    const BaseStates* base, const MergeRule& rule,
                    const SlotInventory& inventory, const std::string& config_hash = "");

// Runs predict_turn over every turn; `workers` > 1 splits dialogues across
// threads. Output does not depend on the worker count.
CorefPredictionTable predict_dialogues(const CdstModel& model,
                                       const std::vector<Dialogue>& dialogues, int workers = 1);

struct AuditReport {
  std::size_t slots = 0;
  std::size_t domains = 0;
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::size_t turns = 0;
  CorefStatistics coref;

  nlohmann::json to_json() const;
  std::string table() const;
};

AuditReport audit_dataset(const std::vector<Dialogue>& corpus, const SlotInventory& inventory);

struct AblationSpec {
  std::string name;
  bool include_utterance = true;
  bool include_slot = true;
};

// "-uttr." and "-uttr.,-slot.".
std::vector<AblationSpec> default_ablations();

struct AblationRow {
  std::string name;
  TrainConfig config;
  TrainReport training;
  CorefPredictionTable predictions;
  EvalReport standalone;
  std::optional<EvalReport> merged;
};

// Trains one model per configuration (the base config first, named "full",
// then each ablation applied to it) on the train split, selects on dev and
// scores `eval_split`. Merged reports are added when `base` is given.
std::vector<AblationRow> run_ablation(const std::vector<Dialogue>& corpus,
                                      const SlotInventory& inventory, const TrainConfig& base_config,
                                      std::span<const AblationSpec> ablations, Split eval_split,
                                      const BaseStates* base = nullptr,
                                      const MergeRule& rule = {});

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace cdst

#endif  // CDST_EVALUATION_H_
