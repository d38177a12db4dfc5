#include "cdst/evaluation.h"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

#include "cdst/text.h"

namespace cdst {
namespace {

using nlohmann::json;

const TurnCorefPredictions& predictions_for(const CorefPredictionTable& table,
                                            const std::string& dialogue_id, int turn) {
  static const TurnCorefPredictions kEmpty;
  auto it = table.find({dialogue_id, turn});
  return it == table.end() ? kEmpty : it->second;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%6.2f%%", 100.0 * fraction);
  return buf;
}

}  // namespace

double jga(std::span<const BeliefState> predicted, std::span<const BeliefState> gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("misaligned turn sequences");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double slot_accuracy(std::span<const BeliefState> predicted, std::span<const BeliefState> gold,
                     const SlotInventory& inventory) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("misaligned turn sequences");
  if (gold.empty() || inventory.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (const auto& s : inventory) hits += predicted[i].get(s.name()) == gold[i].get(s.name());
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size() * inventory.size());
}

std::map<std::string, SlotCounts> per_slot_coref_counts(const CorefPredictionTable& predictions,
                                                        const std::vector<Dialogue>& gold) {
  std::map<std::string, SlotCounts> out;
  for (const auto& d : gold) {
    for (const auto& t : d.turns) {
      const auto& turn_preds = predictions_for(predictions, d.dialogue_id, t.turn_index);
      for (const auto& label : t.coref_labels) {
        SlotCounts& c = out[label.slot];
        ++c.total;
        auto it = turn_preds.find(label.slot);
        if (it != turn_preds.end() &&
            normalize_value(label.slot, it->second.value) == normalize_value(label.slot, label.value)) {
          ++c.correct;
        }
      }
    }
  }
  return out;
}

std::map<std::string, double> per_slot_coref_accuracy(const CorefPredictionTable& predictions,
                                                      const std::vector<Dialogue>& gold) {
  std::map<std::string, double> out;
  for (const auto& [slot, counts] : per_slot_coref_counts(predictions, gold)) {
    out[slot] = counts.accuracy();
  }
  return out;
}

// EvalReport ------------------------------------------------------------------------

json EvalReport::to_json() const {
  json per_slot = json::object();
  for (const auto& [slot, c] : per_slot_coref_counts) {
    per_slot[slot] = {{"correct", c.correct}, {"total", c.total}, {"accuracy", c.accuracy()}};
  }
  return {{"mode", mode},
          {"merge_policy", merge_policy},
          {"threshold", threshold},
          {"jga", jga},
          {"slot_accuracy", slot_accuracy},
          {"coref_slot_type_accuracy", coref_slot_type_accuracy},
          {"coref_span_exact_match", coref_span_exact_match},
          {"coref_value_accuracy", coref_value_accuracy},
          {"per_slot_coref_accuracy", per_slot},
          {"per_slot_note", "accuracy = exact value match over gold coreference instances"},
          {"turn_count", turn_count},
          {"coref_instances", coref_instances},
          {"config_hash", config_hash}};
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << "mode                      " << mode;
  if (!merge_policy.empty()) out << " (" << merge_policy << ")";
  out << "\nturns                     " << turn_count << "\n"
      << "joint goal accuracy       " << percent(jga) << "\n"
      << "slot accuracy             " << percent(slot_accuracy) << "\n"
      << "coref slot-type accuracy  " << percent(coref_slot_type_accuracy) << "\n"
      << "coref span exact match    " << percent(coref_span_exact_match) << "\n"
      << "coref value accuracy      " << percent(coref_value_accuracy) << "  ("
      << coref_instances << " instances)\n";
  if (!per_slot_coref_counts.empty()) {
    out << "per-slot coreference accuracy:\n";
    for (const auto& [slot, c] : per_slot_coref_counts) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "  %-24s %s  (%zu/%zu)\n", slot.c_str(),
                    percent(c.accuracy()).c_str(), c.correct, c.total);
      out << buf;
    }
  }
  return out.str();
}

std::string EvalReport::per_slot_csv() const {
  std::ostringstream out;
  out << "slot,correct,total,accuracy\n";
  for (const auto& [slot, c] : per_slot_coref_counts) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", c.accuracy());
    out << slot << ',' << c.correct << ',' << c.total << ',' << buf << '\n';
  }
  return out.str();
}

EvalReport evaluate(const std::vector<Dialogue>& gold, const CorefPredictionTable& predictions,
                    const BaseStates* base, const MergeRule& rule, const SlotInventory& inventory,
                    const std::string& config_hash) {
  EvalReport report;
  report.mode = base ? "merged" : "cdst-standalone";
  report.merge_policy = base ? std::string(to_string(rule.policy)) : "";
  report.threshold = rule.threshold;
  report.config_hash = config_hash;

  std::vector<BeliefState> predicted_states;
  std::vector<BeliefState> gold_states;
  std::size_t type_hits = 0, type_total = 0, span_hits = 0;
  const BaseStates empty_table;
  for (const auto& d : gold) {
    const auto base_states = base_states_for(d, base ? *base : empty_table, inventory, base == nullptr);
    std::vector<TurnCorefPredictions> coref;
    for (const auto& t : d.turns) coref.push_back(predictions_for(predictions, d.dialogue_id, t.turn_index));
    const auto merged = track_dialogue(d, base_states, coref, rule);
    for (std::size_t ti = 0; ti < d.turns.size(); ++ti) {
      const Turn& t = d.turns[ti];
      predicted_states.push_back(merged[ti].state);
      gold_states.push_back(t.gold_state);
      for (const auto& s : inventory) {
        const std::string name = s.name();
        const bool gold_coref = std::any_of(t.coref_labels.begin(), t.coref_labels.end(),
                                            [&](const CorefLabel& l) { return l.slot == name; });
        auto it = coref[ti].find(name);
        const bool pred_coref = it != coref[ti].end() && it->second.p_coref >= rule.threshold;
        type_hits += gold_coref == pred_coref;
        ++type_total;
      }
      for (const auto& label : t.coref_labels) {
        auto it = coref[ti].find(label.slot);
        if (it != coref[ti].end() && !it->second.decoded.empty() &&
            normalize_value(label.slot, it->second.decoded) == label.value) {
          ++span_hits;
        }
      }
    }
  }
  report.turn_count = gold_states.size();
  report.jga = jga(predicted_states, gold_states);
  report.slot_accuracy = slot_accuracy(predicted_states, gold_states, inventory);
  report.coref_slot_type_accuracy =
      type_total == 0 ? 0.0 : static_cast<double>(type_hits) / static_cast<double>(type_total);
  report.per_slot_coref_counts = per_slot_coref_counts(predictions, gold);
  std::size_t value_hits = 0;
  for (const auto& [slot, c] : report.per_slot_coref_counts) {
    report.per_slot_coref_accuracy[slot] = c.accuracy();
    report.coref_instances += c.total;
    value_hits += c.correct;
  }
  if (report.coref_instances > 0) {
    const auto n = static_cast<double>(report.coref_instances);
    report.coref_value_accuracy = static_cast<double>(value_hits) / n;
    report.coref_span_exact_match = static_cast<double>(span_hits) / n;
  }
  return report;
}

CorefPredictionTable predict_dialogues(const CdstModel& model,
                                       const std::vector<Dialogue>& dialogues, int workers) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(dialogues.size())));
  std::vector<CorefPredictionTable> parts(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    for (std::size_t i = static_cast<std::size_t>(w); i < dialogues.size();
         i += static_cast<std::size_t>(workers)) {
      const Dialogue& d = dialogues[i];
      for (const auto& t : d.turns) {
        parts[w][{d.dialogue_id, t.turn_index}] = model.predict_turn(d, t.turn_index);
      }
    }
  };
  if (workers == 1) {
    run(0);
    return std::move(parts[0]);
  }
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) threads.emplace_back(run, w);
  for (auto& th : threads) th.join();
  CorefPredictionTable out;
  for (auto& p : parts) out.merge(p);
  return out;
}

// Audit -----------------------------------------------------------------------------

json AuditReport::to_json() const {
  return {{"slots", slots}, {"domains", domains}, {"train", train}, {"dev", dev},
          {"test", test},   {"turns", turns},     {"coref", coref.to_json()}};
}

std::string AuditReport::table() const {
  std::ostringstream out;
  out << "slots                      " << slots << "\n"
      << "domains                    " << domains << "\n"
      << "dialogues train/dev/test   " << train << "/" << dev << "/" << test << "\n"
      << "turns                      " << turns << "\n"
      << "coref dialogues            " << coref.coref_dialogues << " of " << coref.dialogues << " ("
      << percent(coref.coref_dialogue_fraction) << ")\n"
      << "coref labels               " << coref.labels << "\n"
      << "distinct coreferred slots  " << coref.distinct_slots() << "\n";
  for (const auto& [slot, n] : coref.per_slot) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "  %-24s %zu\n", slot.c_str(), n);
    out << buf;
  }
  return out.str();
}

AuditReport audit_dataset(const std::vector<Dialogue>& corpus, const SlotInventory& inventory) {
  AuditReport r;
  r.slots = inventory.size();
  r.domains = inventory.domains().size();
  for (const auto& d : corpus) {
    switch (d.split) {
      case Split::kTrain: ++r.train; break;
      case Split::kDev: ++r.dev; break;
      case Split::kTest: ++r.test; break;
    }
    r.turns += d.turns.size();
  }
  r.coref = coref_statistics(corpus);
  return r;
}

// Ablation --------------------------------------------------------------------------

std::vector<AblationSpec> default_ablations() {
  return {{"-uttr.", false, true}, {"-uttr.,-slot.", false, false}};
}

std::vector<AblationRow> run_ablation(const std::vector<Dialogue>& corpus,
                                      const SlotInventory& inventory, const TrainConfig& base_config,
                                      std::span<const AblationSpec> ablations, Split eval_split,
                                      const BaseStates* base, const MergeRule& rule) {
  std::vector<AblationSpec> specs{{"full", base_config.include_utterance, base_config.include_slot}};
  specs.insert(specs.end(), ablations.begin(), ablations.end());

  const auto train_dialogues = select_split(corpus, Split::kTrain);
  const auto dev_dialogues = select_split(corpus, Split::kDev);
  const auto eval_dialogues = select_split(corpus, eval_split);

  std::vector<AblationRow> rows;
  for (const auto& spec : specs) {
    AblationRow row;
    row.name = spec.name;
    row.config = base_config;
    row.config.include_utterance = spec.include_utterance;
    row.config.include_slot = spec.include_slot;
    auto model = make_model(row.config, inventory, train_dialogues);
    const auto train_examples = batch_examples(
        train_dialogues, model->builder(),
        SamplingPolicy::balanced(row.config.negatives_per_positive, row.config.seed));
    const auto dev_examples = batch_examples(dev_dialogues, model->builder(), SamplingPolicy::all());
    row.training = train(*model, train_examples, dev_examples, row.config);
    row.predictions = predict_dialogues(*model, eval_dialogues);
    const std::string hash = train_config_hash(*model, row.config);
    MergeRule eval_rule = rule;
    eval_rule.threshold = row.config.threshold;
    row.standalone = evaluate(eval_dialogues, row.predictions, nullptr, eval_rule, inventory, hash);
    if (base) row.merged = evaluate(eval_dialogues, row.predictions, base, eval_rule, inventory, hash);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "configuration      JGA(standalone)  JGA(merged)  coref value acc\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %15s  %11s  %15s\n", r.name.c_str(),
                  percent(r.standalone.jga).c_str(),
                  r.merged ? percent(r.merged->jga).c_str() : "-",
                  percent(r.standalone.coref_value_accuracy).c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace cdst
