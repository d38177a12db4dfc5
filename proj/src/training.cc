#include "cdst/training.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cdst/text.h"

namespace cdst {
namespace {

using nlohmann::json;

std::string describe(const EncodedExample& ex) {
  return ex.dialogue_id + "/" + std::to_string(ex.turn_index) + "/" + ex.slot.name();
}

GoldLabel gold_of(const EncodedExample& ex) { return {ex.gold_slot_type, ex.gold_span}; }

}  // namespace

// TrainConfig -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (max_seq_length < 8) throw std::invalid_argument("max_seq_length must be at least 8");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw std::invalid_argument("warmup_ratio must lie in [0, 1]");
  }
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (optimizer != "adam") throw std::invalid_argument("only the adam optimizer is supported");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  if (gradient_clip_norm < 0.0) throw std::invalid_argument("gradient_clip_norm must be >= 0");
  if (encoder_choice != "tiny" && encoder_choice != "pretrained") {
    throw std::invalid_argument("encoder_choice must be tiny or pretrained");
  }
  if (encoder_choice == "pretrained" && pretrained_path.empty()) {
    throw std::invalid_argument("pretrained encoder needs pretrained_path");
  }
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  if (negatives_per_positive < 0) throw std::invalid_argument("negatives_per_positive must be >= 0");
  input_config();
  model_config();
}

InputConfig TrainConfig::input_config() const {
  return InputConfig::from_json({{"max_seq_length", max_seq_length},
                                 {"include_utterance", include_utterance},
                                 {"include_slot", include_slot},
                                 {"context_order", context_order},
                                 {"segment_scheme", segment_scheme}});
}

ModelConfig TrainConfig::model_config() const {
  return ModelConfig::from_json({{"input", input_config().to_json()},
                                 {"beta", beta},
                                 {"threshold", threshold},
                                 {"mask_invalid_positions", mask_invalid_positions},
                                 {"span_decoding", span_decoding}});
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"max_seq_length", max_seq_length},
          {"warmup_ratio", warmup_ratio},
          {"epochs", epochs},
          {"optimizer", optimizer},
          {"batch_size", batch_size},
          {"beta", beta},
          {"seed", seed},
          {"gradient_clip_norm", gradient_clip_norm},
          {"encoder_choice", encoder_choice},
          {"pretrained_path", pretrained_path},
          {"max_steps", max_steps},
          {"negatives_per_positive", negatives_per_positive},
          {"threshold", threshold},
          {"include_utterance", include_utterance},
          {"include_slot", include_slot},
          {"context_order", context_order},
          {"segment_scheme", segment_scheme},
          {"mask_invalid_positions", mask_invalid_positions},
          {"span_decoding", span_decoding},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_epsilon", adam_epsilon},
          {"weight_decay", weight_decay}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("unknown train config key: " + key);
  }
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
    c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
    c.epochs = j.value("epochs", c.epochs);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta = j.value("beta", c.beta);
    c.seed = j.value("seed", c.seed);
    c.gradient_clip_norm = j.value("gradient_clip_norm", c.gradient_clip_norm);
    c.encoder_choice = j.value("encoder_choice", c.encoder_choice);
    c.pretrained_path = j.value("pretrained_path", c.pretrained_path);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.negatives_per_positive = j.value("negatives_per_positive", c.negatives_per_positive);
    c.threshold = j.value("threshold", c.threshold);
    c.include_utterance = j.value("include_utterance", c.include_utterance);
    c.include_slot = j.value("include_slot", c.include_slot);
    c.context_order = j.value("context_order", c.context_order);
    c.segment_scheme = j.value("segment_scheme", c.segment_scheme);
    c.mask_invalid_positions = j.value("mask_invalid_positions", c.mask_invalid_positions);
    c.span_decoding = j.value("span_decoding", c.span_decoding);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad train config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open train config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed train config " + path + ": " + e.what());
  }
  return from_json(j);
}

// Schedule and optimizer --------------------------------------------------------------

LinearSchedule::LinearSchedule(double peak, int total_steps, double warmup_ratio)
    : peak_(peak),
      total_(total_steps),
      warmup_(static_cast<int>(std::floor(warmup_ratio * total_steps))) {}

double LinearSchedule::at(int step) const {
  if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
  if (total_ <= warmup_) return peak_;
  const double remaining = std::max(0, total_ - step);
  return peak_ * remaining / static_cast<double>(total_ - warmup_);
}

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double epsilon,
           double weight_decay)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      weight_decay_(weight_decay) {
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(double learning_rate) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + epsilon_);
    p.value -= learning_rate * (update + weight_decay_ * p.value);
  }
}

double clip_gradients(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

// Metrics ------------------------------------------------------------------------

json CorefMetrics::to_json() const {
  return {{"slot_type_accuracy", slot_type_accuracy},
          {"span_exact_match", span_exact_match},
          {"joint_accuracy", joint_accuracy},
          {"examples", examples},
          {"span_examples", span_examples}};
}

CorefMetrics score_coref(std::span<const ExamplePrediction> predictions,
                         std::span<const EncodedExample> gold) {
  if (gold.empty()) throw std::invalid_argument("empty evaluation stream");
  if (predictions.size() != gold.size()) throw std::invalid_argument("prediction/gold size mismatch");
  CorefMetrics m;
  m.examples = gold.size();
  std::size_t type_ok = 0, span_ok = 0, joint_ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold[i];
    const auto& p = predictions[i];
    const bool type_match = p.slot_type == g.gold_slot_type;
    type_ok += type_match;
    const bool span_match = g.gold_span && p.span && *p.span == *g.gold_span;
    if (g.gold_slot_type == SlotType::kCoref && g.gold_span) {
      ++m.span_examples;
      span_ok += span_match;
    }
    const bool needs_span = g.gold_slot_type == SlotType::kCoref && g.gold_span.has_value();
    joint_ok += type_match && (!needs_span || span_match);
  }
  const auto n = static_cast<double>(m.examples);
  m.slot_type_accuracy = static_cast<double>(type_ok) / n;
  m.joint_accuracy = static_cast<double>(joint_ok) / n;
  m.span_exact_match =
      m.span_examples > 0 ? static_cast<double>(span_ok) / static_cast<double>(m.span_examples) : 0.0;
  return m;
}

CorefMetrics evaluate_dev(const CdstModel& model, std::span<const EncodedExample> dev,
                          double threshold) {
  if (dev.empty()) throw std::invalid_argument("empty dev stream");
  std::vector<ExamplePrediction> preds;
  preds.reserve(dev.size());
  for (const auto& ex : dev) {
    const CorefPrediction p = model.predict(ex, threshold);
    ExamplePrediction e;
    e.slot_type = p.p_coref >= threshold ? SlotType::kCoref : SlotType::kNone;
    e.span = p.span;
    preds.push_back(e);
  }
  return score_coref(preds, dev);
}

// Training --------------------------------------------------------------------------

json TrainReport::to_json(bool include_timing) const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    json r = {{"epoch", e.epoch}, {"loss", e.mean_loss.to_json()}};
    r["dev"] = e.dev ? e.dev->to_json() : json(nullptr);
    if (include_timing) r["seconds"] = e.seconds;
    epochs_json.push_back(std::move(r));
  }
  return {{"epochs", epochs_json},     {"step_losses", step_losses},
          {"best_epoch", best_epoch},  {"steps", steps},
          {"stopped_early", stopped_early}, {"config_hash", config_hash}};
}

std::unique_ptr<CdstModel> make_model(const TrainConfig& config, const SlotInventory& inventory,
                                      const std::vector<Dialogue>& train_dialogues) {
  config.validate();
  if (config.encoder_choice == "pretrained") {
    return std::make_unique<CdstModel>(
        inventory, Vocab::load(config.pretrained_path + "/vocab.txt"),
        load_pretrained_encoder(config.pretrained_path), config.model_config(), config.seed + 1);
  }
  std::vector<std::string> texts;
  for (const auto& s : inventory) texts.push_back(s.surface_form);
  for (const auto& d : train_dialogues) {
    for (const auto& t : d.turns) {
      texts.push_back(t.user_utterance);
      texts.push_back(t.system_utterance);
    }
  }
  Vocab vocab = Vocab::build(texts);
  auto encoder = make_tiny_encoder(vocab.size(), config.seed, config.max_seq_length);
  return std::make_unique<CdstModel>(inventory, std::move(vocab), std::move(encoder),
                                     config.model_config(), config.seed + 1);
}

std::string train_config_hash(const CdstModel& model, const TrainConfig& config) {
  const json j = {{"model", model.config_hash()}, {"train", config.to_json()}};
  return hex64(fnv1a64(j.dump()));
}

TrainReport train(CdstModel& model, std::span<const EncodedExample> train_examples,
                  std::span<const EncodedExample> dev_examples, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_examples.empty()) throw std::invalid_argument("empty training stream");

  const auto n = train_examples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  int total_steps = steps_per_epoch * config.epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  const LinearSchedule schedule(config.learning_rate, total_steps, config.warmup_ratio);
  auto params = model.parameters();
  Adam adam(params, config.adam_beta1, config.adam_beta2, config.adam_epsilon,
            config.weight_decay);
  std::mt19937_64 rng(config.seed);

  TrainReport report;
  report.config_hash = train_config_hash(model, config);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  double best_metric = -1.0;
  std::vector<Matrix> best_values;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs && step < total_steps; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss.beta = config.beta;
    int batches = 0;
    for (std::size_t b = 0; b < n && step < total_steps; b += batch) {
      const std::size_t end = std::min(n, b + batch);
      model.zero_grad();
      std::vector<RawOutput> outputs;
      std::vector<GoldLabel> gold;
      std::vector<CdstModel::Tape> tapes(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const EncodedExample& ex = train_examples[order[i]];
        outputs.push_back(model.forward_train(ex, &tapes[i - b]));
        gold.push_back(gold_of(ex));
      }
      LossGradients grads;
      const LossBreakdown loss = joint_loss(outputs, gold, config.beta, &grads);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " " << loss.to_json().dump() << " batch:";
        for (std::size_t i = b; i < end; ++i) msg << ' ' << describe(train_examples[order[i]]);
        throw TrainingError(msg.str());
      }
      for (std::size_t i = 0; i < tapes.size(); ++i) {
        model.backward(tapes[i], grads.cls_logits[i], grads.start_logits[i], grads.end_logits[i]);
      }
      if (config.gradient_clip_norm > 0.0) clip_gradients(params, config.gradient_clip_norm);
      adam.step(schedule.at(step));
      ++step;
      ++batches;
      report.step_losses.push_back(loss.total);
      record.mean_loss.slot_type_loss += loss.slot_type_loss;
      record.mean_loss.span_loss += loss.span_loss;
      record.mean_loss.total += loss.total;
      record.mean_loss.span_examples += loss.span_examples;
    }
    if (batches > 0) {
      record.mean_loss.slot_type_loss /= batches;
      record.mean_loss.span_loss /= batches;
      record.mean_loss.total /= batches;
    }
    if (!dev_examples.empty()) {
      record.dev = evaluate_dev(model, dev_examples, config.threshold);
      if (record.dev->joint_accuracy > best_metric) {
        best_metric = record.dev->joint_accuracy;
        report.best_epoch = epoch;
        best_values.clear();
        for (const Parameter* p : params) best_values.push_back(p->value);
      }
    } else {
      report.best_epoch = epoch;
    }
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  report.steps = step;
  report.stopped_early = static_cast<int>(report.epochs.size()) < config.epochs;
  if (!best_values.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  model.zero_grad();
  return report;
}

}  // namespace cdst
