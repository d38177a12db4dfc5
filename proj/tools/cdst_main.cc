// cdst: ingest, audit, train, predict, merge, evaluate and ablate.
//
// Exit status: 0 on success, 1 when inputs fail validation or a stage
// fails, 2 on a usage error. Errors are printed to stderr as one JSON
// object {"error", "message"}.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdst/corpus.h"
#include "cdst/evaluation.h"
#include "cdst/manifest.h"
#include "cdst/model.h"
#include "cdst/tracker.h"
#include "cdst/training.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string slots_file;
  bool deterministic = false;
  int workers = 1;
};

struct DataArgs {
  std::string data;
  std::string coref;
};

std::string default_data_dir() {
  const char* env = std::getenv("CDST_DATA_DIR");
  return env ? env : "";
}

cdst::SlotInventory inventory_for(const Common& c) {
  return c.slots_file.empty() ? cdst::SlotInventory::multiwoz()
                              : cdst::SlotInventory::load(c.slots_file);
}

// A directory holding corpus.jsonl (ingest output) or raw MultiWOZ files.
std::vector<cdst::Dialogue> load_dialogues(const DataArgs& args, const cdst::SlotInventory& inventory,
                                           json* report = nullptr) {
  if (args.data.empty()) throw std::invalid_argument("no data directory (use --data or CDST_DATA_DIR)");
  const fs::path root(args.data);
  if (fs::exists(root / "corpus.jsonl")) return cdst::read_corpus((root / "corpus.jsonl").string());
  cdst::LoadReport load_report;
  auto dialogues = cdst::load_multiwoz(args.data, cdst::SplitSpec{}, inventory, &load_report);
  std::string coref = args.coref;
  if (coref.empty() && fs::exists(root / "coref.json")) coref = (root / "coref.json").string();
  cdst::CorefAttachReport attach_report;
  if (!coref.empty()) {
    dialogues = cdst::attach_coref_annotations(std::move(dialogues), coref, inventory, &attach_report);
  }
  if (report) {
    *report = {{"load", load_report.to_json()}, {"coref", attach_report.to_json()},
               {"coref_file", coref}};
  }
  return dialogues;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw std::invalid_argument("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

cdst::RunManifest start_manifest(const std::string& command, const Common& c) {
  cdst::RunManifest m;
  m.command = command;
  if (!c.deterministic) m.started_at = cdst::utc_timestamp();
  return m;
}

void finish_manifest(cdst::RunManifest& m, const Common& c, const fs::path& out) {
  if (!c.deterministic) m.finished_at = cdst::utc_timestamp();
  m.write((out / "manifest.json").string());
}

void write_predictions(const fs::path& path, const cdst::CorefPredictionTable& table,
                       const std::string& hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [key, preds] : table) {
    f << cdst::prediction_record(key.first, key.second, preds, hash).dump() << '\n';
  }
}

cdst::Split parse_split(const std::string& s) { return cdst::split_from_string(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coreference dialogue state tracker"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--slots", common.slots_file, "Slot inventory JSON (default: built-in 30 slots)");
  app.add_flag("--deterministic", common.deterministic,
               "Omit timestamps and timings so identical runs give identical bytes");
  app.add_option("--workers", common.workers, "Worker threads for prediction")
      ->check(CLI::PositiveNumber);

  DataArgs data;
  data.data = default_data_dir();
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", data.data,
                    "MultiWOZ directory or ingest output (default: $CDST_DATA_DIR)");
    sub->add_option("--coref", data.coref,
                    "Coreference annotation file (default: <data>/coref.json when present)");
  };
  std::string out;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Normalize MultiWOZ data into corpus.jsonl");
  add_data(ingest);
  ingest->add_option("--out", out, "Output directory")->required();

  // audit
  auto* audit = app.add_subcommand("audit", "Print dataset and coreference statistics");
  add_data(audit);
  bool audit_json = false;
  audit->add_flag("--json", audit_json, "Print JSON instead of a table");
  audit->add_option("--out", out, "Also write audit.json here");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a coreference model");
  add_data(train_cmd);
  std::string config_file;
  train_cmd->add_option("--config", config_file, "TrainConfig JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "Output directory")->required();
  cdst::TrainConfig flags;
  auto* o_lr = train_cmd->add_option("--learning-rate", flags.learning_rate, "Peak learning rate");
  auto* o_epochs = train_cmd->add_option("--epochs", flags.epochs, "Epochs");
  auto* o_batch = train_cmd->add_option("--batch-size", flags.batch_size, "Batch size");
  auto* o_seed = train_cmd->add_option("--seed", flags.seed, "Random seed");
  auto* o_steps = train_cmd->add_option("--max-steps", flags.max_steps, "Stop after this many updates");
  auto* o_beta = train_cmd->add_option("--beta", flags.beta, "Slot-type loss weight");
  auto* o_len = train_cmd->add_option("--max-seq-length", flags.max_seq_length, "Maximum input tokens");
  auto* o_enc = train_cmd->add_option("--encoder", flags.encoder_choice, "tiny or pretrained")
                    ->check(CLI::IsMember({"tiny", "pretrained"}));
  auto* o_pre = train_cmd->add_option("--pretrained", flags.pretrained_path,
                                      "Converted checkpoint directory");
  auto* o_clip = train_cmd->add_option("--clip", flags.gradient_clip_norm, "Gradient clip norm, 0 = off");

  // predict
  auto* predict = app.add_subcommand("predict", "Run a trained model over a split");
  add_data(predict);
  std::string model_dir;
  std::string split = "test";
  std::optional<double> threshold;
  predict->add_option("--model", model_dir, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--split", split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "val", "test"}));
  predict->add_option("--threshold", threshold, "Coreference probability threshold");
  predict->add_option("--out", out, "Output directory")->required();

  // merge
  auto* merge = app.add_subcommand("merge", "Merge coreference predictions into base tracker states");
  std::string pred_file;
  std::string base_file;
  std::string policy = "coref-overrides-base";
  double merge_threshold = 0.5;
  auto policy_check = CLI::IsMember({"coref-overrides-base", "coref-fills-empty-only"});
  merge->add_option("--pred", pred_file, "Coreference predictions (JSON lines)")->required()->check(CLI::ExistingFile);
  merge->add_option("--base", base_file, "Base tracker states (JSON lines)")->required()->check(CLI::ExistingFile);
  merge->add_option("--policy", policy, "Merge policy")->check(policy_check);
  merge->add_option("--threshold", merge_threshold, "Coreference probability threshold");
  merge->add_option("--out", out, "Output directory")->required();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against gold states");
  std::string gold_dir;
  evaluate_cmd->add_option("--pred", pred_file, "Coreference predictions (JSON lines)")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--gold", gold_dir, "Gold data directory")->required();
  evaluate_cmd->add_option("--coref", data.coref, "Coreference annotation file");
  evaluate_cmd->add_option("--base", base_file, "Base tracker states; without it the run is standalone")->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--policy", policy, "Merge policy")->check(policy_check);
  evaluate_cmd->add_option("--threshold", merge_threshold, "Coreference probability threshold");
  evaluate_cmd->add_option("--split", split, "Gold split")->check(CLI::IsMember({"train", "dev", "val", "test"}));
  evaluate_cmd->add_option("--out", out, "Also write eval.json and per_slot.csv here");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and score the input ablations");
  add_data(ablate);
  ablate->add_option("--config", config_file, "TrainConfig JSON")->check(CLI::ExistingFile);
  ablate->add_option("--split", split, "Evaluation split")->check(CLI::IsMember({"dev", "val", "test"}));
  ablate->add_option("--base", base_file, "Base tracker states for merged scores")->check(CLI::ExistingFile);
  ablate->add_option("--policy", policy, "Merge policy")->check(policy_check);
  ablate->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto inventory = inventory_for(common);

    if (ingest->parsed()) {
      const fs::path dir = prepare_out(out);
      auto manifest = start_manifest("ingest", common);
      json report;
      const auto dialogues = load_dialogues(data, inventory, &report);
      manifest.config = {{"data", data.data}, {"coref", report.value("coref_file", "")},
                         {"slots", inventory.to_json()}};
      manifest.inputs = {{"data", data.data}};
      cdst::write_corpus((dir / "corpus.jsonl").string(), dialogues);
      report["manifest"] = manifest.hash();
      write_json(dir / "ingest_report.json", report);
      manifest.outputs = {{"corpus", "corpus.jsonl"},
                          {"report", "ingest_report.json"}};
      finish_manifest(manifest, common, dir);
      std::cout << "ingested " << dialogues.size() << " dialogues into " << dir.string() << "\n";
      return 0;
    }

    if (audit->parsed()) {
      const auto dialogues = load_dialogues(data, inventory);
      const auto report = cdst::audit_dataset(dialogues, inventory);
      std::cout << (audit_json ? report.to_json().dump(2) + "\n" : report.table());
      if (!out.empty()) write_json(prepare_out(out) / "audit.json", report.to_json());
      return 0;
    }

    auto resolve_config = [&]() {
      cdst::TrainConfig config = config_file.empty() ? cdst::TrainConfig{}
                                                     : cdst::TrainConfig::load(config_file);
      if (o_lr->count()) config.learning_rate = flags.learning_rate;
      if (o_epochs->count()) config.epochs = flags.epochs;
      if (o_batch->count()) config.batch_size = flags.batch_size;
      if (o_seed->count()) config.seed = flags.seed;
      if (o_steps->count()) config.max_steps = flags.max_steps;
      if (o_beta->count()) config.beta = flags.beta;
      if (o_len->count()) config.max_seq_length = flags.max_seq_length;
      if (o_enc->count()) config.encoder_choice = flags.encoder_choice;
      if (o_pre->count()) config.pretrained_path = flags.pretrained_path;
      if (o_clip->count()) config.gradient_clip_norm = flags.gradient_clip_norm;
      config.validate();
      return config;
    };

    if (train_cmd->parsed()) {
      const auto config = resolve_config();
      const fs::path dir = prepare_out(out);
      auto manifest = start_manifest("train", common);
      manifest.config = config.to_json();
      manifest.seed = config.seed;
      manifest.inputs = {{"data", data.data}, {"config", config_file}};
      const auto corpus = load_dialogues(data, inventory);
      const auto train_dialogues = cdst::select_split(corpus, cdst::Split::kTrain);
      const auto dev_dialogues = cdst::select_split(corpus, cdst::Split::kDev);
      if (train_dialogues.empty()) throw std::invalid_argument("no training dialogues");
      auto model = cdst::make_model(config, inventory, train_dialogues);
      const auto train_examples = cdst::batch_examples(
          train_dialogues, model->builder(),
          cdst::SamplingPolicy::balanced(config.negatives_per_positive, config.seed));
      const auto dev_examples =
          cdst::batch_examples(dev_dialogues, model->builder(), cdst::SamplingPolicy::all());
      auto report = cdst::train(*model, train_examples, dev_examples, config,
                                [&](const cdst::EpochRecord& e) {
                                  std::cerr << "epoch " << e.epoch << " loss "
                                            << e.mean_loss.total;
                                  if (e.dev) std::cerr << " dev joint " << e.dev->joint_accuracy;
                                  std::cerr << "\n";
                                });
      model->save((dir / "model").string(), {{"run_manifest", manifest.hash()}});
      json rj = report.to_json(!common.deterministic);
      rj["manifest"] = manifest.hash();
      write_json(dir / "train_report.json", rj);
      manifest.outputs = {{"model", "model"},
                          {"report", "train_report.json"}};
      finish_manifest(manifest, common, dir);
      std::cout << "trained " << report.steps << " steps; best epoch " << report.best_epoch << "\n";
      return 0;
    }

    if (predict->parsed()) {
      const fs::path dir = prepare_out(out);
      auto model = cdst::CdstModel::load(model_dir);
      if (threshold) model->set_threshold(*threshold);
      auto manifest = start_manifest("predict", common);
      manifest.config = {{"model", model->config_hash()},
                         {"threshold", model->config().threshold},
                         {"split", std::string(cdst::to_string(parse_split(split)))}};
      manifest.inputs = {{"model", model_dir}, {"data", data.data}};
      const auto dialogues = cdst::select_split(load_dialogues(data, model->inventory()), parse_split(split));
      const auto table = cdst::predict_dialogues(*model, dialogues, common.workers);
      write_predictions(dir / "predictions.jsonl", table, manifest.hash());
      manifest.outputs = {{"predictions", "predictions.jsonl"}};
      finish_manifest(manifest, common, dir);
      std::cout << "wrote predictions for " << table.size() << " turns\n";
      return 0;
    }

    if (merge->parsed()) {
      const fs::path dir = prepare_out(out);
      const cdst::MergeRule rule{cdst::merge_policy_from_string(policy), merge_threshold};
      auto manifest = start_manifest("merge", common);
      manifest.config = {{"policy", policy}, {"threshold", merge_threshold}};
      manifest.inputs = {{"pred", pred_file}, {"base", base_file}};
      const auto base = cdst::read_base_predictions(base_file, inventory);
      const auto preds = cdst::read_coref_predictions(pred_file);
      std::ofstream f(dir / "merged.jsonl", std::ios::binary);
      static const cdst::TurnCorefPredictions kNone;
      for (const auto& [key, state] : base) {
        auto it = preds.find(key);
        const auto merged = cdst::merge_states(state, it == preds.end() ? kNone : it->second, rule);
        f << cdst::merged_record(key.first, key.second, merged, manifest.hash()).dump() << '\n';
      }
      manifest.outputs = {{"merged", "merged.jsonl"}};
      finish_manifest(manifest, common, dir);
      std::cout << "merged " << base.size() << " turns\n";
      return 0;
    }

    if (evaluate_cmd->parsed()) {
      DataArgs gold{gold_dir, data.coref};
      const auto dialogues = cdst::select_split(load_dialogues(gold, inventory), parse_split(split));
      const auto preds = cdst::read_coref_predictions(pred_file);
      std::optional<cdst::BaseStates> base;
      if (!base_file.empty()) base = cdst::read_base_predictions(base_file, inventory);
      const cdst::MergeRule rule{cdst::merge_policy_from_string(policy), merge_threshold};
      cdst::RunManifest manifest = start_manifest("evaluate", common);
      manifest.config = {{"policy", policy}, {"threshold", merge_threshold},
                         {"split", std::string(cdst::to_string(parse_split(split)))},
                         {"mode", base ? "merged" : "cdst-standalone"}};
      manifest.inputs = {{"pred", pred_file}, {"gold", gold_dir}, {"base", base_file}};
      const auto report = cdst::evaluate(dialogues, preds, base ? &*base : nullptr, rule, inventory,
                                         manifest.hash());
      std::cout << report.table();
      if (!out.empty()) {
        const fs::path dir = prepare_out(out);
        write_json(dir / "eval.json", report.to_json());
        write_text(dir / "per_slot.csv", report.per_slot_csv());
        manifest.outputs = {{"report", "eval.json"},
                            {"per_slot", "per_slot.csv"}};
        finish_manifest(manifest, common, dir);
      }
      return 0;
    }

    if (ablate->parsed()) {
      const auto config = resolve_config();
      const fs::path dir = prepare_out(out);
      auto manifest = start_manifest("ablate", common);
      manifest.config = {{"train", config.to_json()}, {"split", split}, {"policy", policy}};
      manifest.seed = config.seed;
      manifest.inputs = {{"data", data.data}, {"config", config_file}, {"base", base_file}};
      const auto corpus = load_dialogues(data, inventory);
      std::optional<cdst::BaseStates> base;
      if (!base_file.empty()) base = cdst::read_base_predictions(base_file, inventory);
      const auto specs = cdst::default_ablations();
      const auto rows = cdst::run_ablation(corpus, inventory, config, specs, parse_split(split),
                                           base ? &*base : nullptr,
                                           {cdst::merge_policy_from_string(policy), config.threshold});
      json j = json::array();
      for (const auto& r : rows) {
        json row = {{"name", r.name},
                    {"config", r.config.to_json()},
                    {"training", r.training.to_json(!common.deterministic)},
                    {"standalone", r.standalone.to_json()}};
        if (r.merged) row["merged"] = r.merged->to_json();
        j.push_back(std::move(row));
      }
      write_json(dir / "ablation.json", {{"rows", j}, {"manifest", manifest.hash()}});
      write_text(dir / "ablation.txt", cdst::ablation_table(rows));
      manifest.outputs = {{"report", "ablation.json"},
                          {"table", "ablation.txt"}};
      finish_manifest(manifest, common, dir);
      std::cout << cdst::ablation_table(rows);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "failure"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
