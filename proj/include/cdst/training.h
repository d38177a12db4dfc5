#ifndef CDST_TRAINING_H_
#define CDST_TRAINING_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/encoding.h"
#include "cdst/model.h"
#include "json.hpp"

namespace cdst {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Defaults are the BERT-medium fine-tuning setup: lr 1e-4, max length 512,
// warmup ratio 0.1, 10 epochs, Adam, batch size 2, beta 0.8.
struct TrainConfig {
  double learning_rate = 1e-4;
  int max_seq_length = 512;
  double warmup_ratio = 0.1;
  int epochs = 10;
  std::string optimizer = "adam";
  int batch_size = 2;
  double beta = 0.8;
  std::uint64_t seed = 42;
  // 0 disables clipping.
  double gradient_clip_norm = 0.0;
  std::string encoder_choice = "tiny";  // "tiny" or "pretrained"
  std::string pretrained_path;
  // 0 = run every epoch; otherwise training stops after this many updates.
  int max_steps = 0;
  int negatives_per_positive = 3;
  double threshold = 0.5;
  bool include_utterance = true;
  bool include_slot = true;
  std::string context_order = "chronological";
  int segment_scheme = 2;
  bool mask_invalid_positions = true;
  std::string span_decoding = "independent";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
  InputConfig input_config() const;
  ModelConfig model_config() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
};

// Linear warmup from 0 to `peak` over floor(warmup_ratio * total) steps,
// then linear decay to 0 at step `total`.
class LinearSchedule {
 public:
  LinearSchedule(double peak, int total_steps, double warmup_ratio);
  double at(int step) const;
  int warmup_steps() const { return warmup_; }
  int total_steps() const { return total_; }

 private:
  double peak_;
  int total_;
  int warmup_;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double beta1, double beta2, double epsilon,
       double weight_decay);
  void step(double learning_rate);

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  long step_ = 0;
};

// Scales gradients so their global L2 norm is at most `max_norm`; returns
// the norm before clipping.
double clip_gradients(std::span<Parameter* const> params, double max_norm);

struct CorefMetrics {
  double slot_type_accuracy = 0.0;
  // Among gold-coref examples with a gold span: predicted span == gold span.
  double span_exact_match = 0.0;
  // Correct type, and for coref examples also the exact span.
  double joint_accuracy = 0.0;
  std::size_t examples = 0;
  std::size_t span_examples = 0;

  nlohmann::json to_json() const;
};

// What a predictor said about one example; span empty when none was
// produced.
struct ExamplePrediction {
  SlotType slot_type = SlotType::kNone;
  std::optional<TokenSpan> span;
};

CorefMetrics score_coref(std::span<const ExamplePrediction> predictions,
                         std::span<const EncodedExample> gold);

// Throws std::invalid_argument on an empty dev stream.
CorefMetrics evaluate_dev(const CdstModel& model, std::span<const EncodedExample> dev,
                          double threshold);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown mean_loss;
  std::optional<CorefMetrics> dev;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  int best_epoch = -1;
  int steps = 0;
  bool stopped_early = false;
  std::string config_hash;

  // `include_timing` false drops wall-clock fields so reports of identical
  // runs compare byte for byte.
  nlohmann::json to_json(bool include_timing = true) const;
};

// Builds a model for `config`: the tiny encoder with a vocabulary built from
// `train_dialogues`, or the converted pretrained checkpoint at
// config.pretrained_path.
std::unique_ptr<CdstModel> make_model(const TrainConfig& config, const SlotInventory& inventory,
                                      const std::vector<Dialogue>& train_dialogues);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minimizes the joint loss with Adam under the linear schedule, shuffling
// examples every epoch with the configured seed. After the last epoch the
// parameters of the best dev epoch (joint accuracy) are restored; with an
// empty dev stream the final parameters are kept. Throws TrainingError on a
// non-finite loss.
TrainReport train(CdstModel& model, std::span<const EncodedExample> train_examples,
                  std::span<const EncodedExample> dev_examples, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

std::string train_config_hash(const CdstModel& model, const TrainConfig& config);

}  // namespace cdst

#endif  // CDST_TRAINING_H_
