#include "cdst/model.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "cdst/text.h"

namespace cdst {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool allowed(std::span<const std::uint8_t> candidates, Eigen::Index i) {
  return candidates.empty() || candidates[static_cast<std::size_t>(i)] != 0;
}

// Softmax over the allowed positions; disallowed positions get 0.
Vector masked_softmax(const Vector& logits, std::span<const std::uint8_t> candidates) {
  double mx = kNegInf;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (allowed(candidates, i)) mx = std::max(mx, logits(i));
  }
  Vector out = Vector::Zero(logits.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!allowed(candidates, i)) continue;
    out(i) = std::exp(logits(i) - mx);
    sum += out(i);
  }
  return out / sum;
}

// -log softmax(logits)[target] over allowed positions.
double masked_cross_entropy(const Vector& logits, std::span<const std::uint8_t> candidates,
                            int target) {
  double mx = kNegInf;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (allowed(candidates, i)) mx = std::max(mx, logits(i));
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (allowed(candidates, i)) sum += std::exp(logits(i) - mx);
  }
  return mx + std::log(sum) - logits(target);
}

int argmax_lowest(const Vector& v, std::span<const std::uint8_t> candidates) {
  int best = -1;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!allowed(candidates, i)) continue;
    if (best < 0 || v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

std::string decoding_name(SpanDecoding d) {
  return d == SpanDecoding::kIndependent ? "independent" : "joint";
}

}  // namespace

// SlotHeads -------------------------------------------------------------------

SlotHeads::SlotHeads(const SlotInventory& inventory, int hidden_size, std::uint64_t seed,
                     double init_stddev)
    : inventory_(inventory), hidden_(hidden_size) {
  std::mt19937_64 rng(seed);
  for (const auto& s : inventory_) {
    const std::string p = "heads." + s.name() + ".";
    HeadPair h{Parameter(p + "cls.weight", hidden_size, 2), Parameter(p + "cls.bias", 1, 2),
               Parameter(p + "span.weight", hidden_size, 2), Parameter(p + "span.bias", 1, 2)};
    h.cls_weight.fill_normal(rng, init_stddev);
    h.span_weight.fill_normal(rng, init_stddev);
    heads_.push_back(std::move(h));
  }
}

std::size_t SlotHeads::index_of(const DomainSlot& slot) const {
  return inventory_.require(slot.name());
}

std::vector<Parameter*> SlotHeads::parameters() {
  std::vector<Parameter*> out;
  for (auto& h : heads_) {
    out.insert(out.end(), {&h.cls_weight, &h.cls_bias, &h.span_weight, &h.span_bias});
  }
  return out;
}

std::vector<const Parameter*> SlotHeads::parameters() const {
  auto p = const_cast<SlotHeads*>(this)->parameters();
  return {p.begin(), p.end()};
}

// Heads -----------------------------------------------------------------------

SlotTypeProbs classify_slot_type(const RowVector& cls_vector, const DomainSlot& slot,
                                 const SlotHeads& heads) {
  if (cls_vector.size() != heads.hidden_size()) {
    throw std::invalid_argument("cls vector dimension does not match the heads");
  }
  const HeadPair& h = heads.at(heads.index_of(slot));
  const RowVector logits = cls_vector * h.cls_weight.value + h.cls_bias.value.row(0);
  const double mx = logits.maxCoeff();
  const double e0 = std::exp(logits(0) - mx);
  const double e1 = std::exp(logits(1) - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

SpanPrediction predict_span(const Matrix& token_vectors, const DomainSlot& slot,
                            const SlotHeads& heads, std::span<const std::uint8_t> candidates,
                            const SpanOptions& options) {
  if (token_vectors.rows() == 0) throw std::invalid_argument("no token vectors");
  if (token_vectors.cols() != heads.hidden_size()) {
    throw std::invalid_argument("token vector dimension does not match the heads");
  }
  if (!candidates.empty() && static_cast<Eigen::Index>(candidates.size()) != token_vectors.rows()) {
    throw std::invalid_argument("candidate mask length does not match the sequence");
  }
  const HeadPair& h = heads.at(heads.index_of(slot));
  Matrix logits = token_vectors * h.span_weight.value;
  logits.rowwise() += h.span_bias.value.row(0);

  SpanPrediction out;
  out.start_logits = logits.col(0);
  out.end_logits = logits.col(1);
  if (argmax_lowest(out.start_logits, candidates) < 0) {
    throw std::invalid_argument("every span position is masked");
  }
  out.start_dist = masked_softmax(out.start_logits, candidates);
  out.end_dist = masked_softmax(out.end_logits, candidates);
  if (options.decoding == SpanDecoding::kIndependent) {
    out.span = {argmax_lowest(out.start_logits, candidates), argmax_lowest(out.end_logits, candidates)};
    return out;
  }
  double best = kNegInf;
  const auto m = static_cast<int>(token_vectors.rows());
  for (int s = 0; s < m; ++s) {
    if (!allowed(candidates, s)) continue;
    for (int e = s; e < m && e - s + 1 <= options.max_span_length; ++e) {
      if (!allowed(candidates, e)) continue;
      const double score = out.start_logits(s) + out.end_logits(e);
      if (score > best) {
        best = score;
        out.span = {s, e};
      }
    }
  }
  return out;
}

// Loss ------------------------------------------------------------------------

json LossBreakdown::to_json() const {
  return {{"slot_type_loss", slot_type_loss}, {"span_loss", span_loss}, {"total", total},
          {"beta", beta}, {"span_examples", span_examples}};
}

LossBreakdown joint_loss(std::span<const RawOutput> outputs, std::span<const GoldLabel> gold,
                         double beta, LossGradients* gradients) {
  if (outputs.empty()) throw std::invalid_argument("empty batch");
  if (outputs.size() != gold.size()) throw std::invalid_argument("batch/label size mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");

  const std::size_t n = outputs.size();
  LossBreakdown loss;
  loss.beta = beta;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = gold[i];
    if (!g.span) continue;
    const auto m = outputs[i].start_logits.size();
    for (int pos : {g.span->start, g.span->end}) {
      if (pos < 0 || pos >= m || !allowed(outputs[i].candidates, pos)) {
        throw std::out_of_range("gold span index outside the candidate positions");
      }
    }
    ++loss.span_examples;
  }

  if (gradients) {
    gradients->cls_logits.assign(n, Eigen::Vector2d::Zero());
    gradients->start_logits.clear();
    gradients->end_logits.clear();
    for (const auto& o : outputs) {
      gradients->start_logits.push_back(Vector::Zero(o.start_logits.size()));
      gradients->end_logits.push_back(Vector::Zero(o.end_logits.size()));
    }
  }

  const double type_weight = beta / static_cast<double>(n);
  const double span_weight =
      loss.span_examples > 0 ? (1.0 - beta) / static_cast<double>(loss.span_examples) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const RawOutput& o = outputs[i];
    const int target = static_cast<int>(gold[i].slot_type);
    const double mx = o.cls_logits.maxCoeff();
    const Eigen::Vector2d e = (o.cls_logits.array() - mx).exp();
    const Eigen::Vector2d p = e / e.sum();
    loss.slot_type_loss += mx + std::log(e.sum()) - o.cls_logits(target);
    if (gradients) {
      Eigen::Vector2d d = p;
      d(target) -= 1.0;
      gradients->cls_logits[i] = type_weight * d;
    }
    if (!gold[i].span) continue;
    const TokenSpan span = *gold[i].span;
    loss.span_loss += 0.5 * (masked_cross_entropy(o.start_logits, o.candidates, span.start) +
                             masked_cross_entropy(o.end_logits, o.candidates, span.end));
    if (gradients) {
      Vector ds = masked_softmax(o.start_logits, o.candidates);
      Vector de = masked_softmax(o.end_logits, o.candidates);
      ds(span.start) -= 1.0;
      de(span.end) -= 1.0;
      gradients->start_logits[i] = 0.5 * span_weight * ds;
      gradients->end_logits[i] = 0.5 * span_weight * de;
    }
  }
  loss.slot_type_loss /= static_cast<double>(n);
  if (loss.span_examples > 0) loss.span_loss /= static_cast<double>(loss.span_examples);
  loss.total = beta * loss.slot_type_loss + (1.0 - beta) * loss.span_loss;
  return loss;
}

// CorefPrediction -------------------------------------------------------------

json CorefPrediction::to_json() const {
  return {{"p_coref", p_coref},
          {"span", {span.start, span.end}},
          {"decoded", decoded},
          {"value", value}};
}

CorefPrediction CorefPrediction::from_json(const std::string& slot, const json& j) {
  CorefPrediction p;
  p.slot = slot;
  p.p_coref = j.at("p_coref").get<double>();
  const auto& span = j.at("span");
  p.span = {span.at(0).get<int>(), span.at(1).get<int>()};
  p.decoded = j.value("decoded", std::string());
  p.value = j.at("value").get<std::string>();
  return p;
}

// ModelConfig -----------------------------------------------------------------

json ModelConfig::to_json() const {
  return {{"input", input.to_json()},
          {"beta", beta},
          {"threshold", threshold},
          {"mask_invalid_positions", mask_invalid_positions},
          {"span_decoding", decoding_name(span.decoding)},
          {"max_span_length", span.max_span_length}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  if (j.contains("input")) c.input = InputConfig::from_json(j.at("input"));
  c.beta = j.value("beta", c.beta);
  c.threshold = j.value("threshold", c.threshold);
  c.mask_invalid_positions = j.value("mask_invalid_positions", c.mask_invalid_positions);
  const std::string decoding = j.value("span_decoding", std::string("independent"));
  if (decoding == "independent") {
    c.span.decoding = SpanDecoding::kIndependent;
  } else if (decoding == "joint") {
    c.span.decoding = SpanDecoding::kJoint;
  } else {
    throw std::invalid_argument("unknown span_decoding: " + decoding);
  }
  c.span.max_span_length = j.value("max_span_length", c.span.max_span_length);
  return c;
}

// CdstModel -------------------------------------------------------------------

CdstModel::CdstModel(SlotInventory inventory, Vocab vocab, std::unique_ptr<Encoder> encoder,
                     ModelConfig config, std::uint64_t head_seed)
    : inventory_(std::make_unique<SlotInventory>(std::move(inventory))),
      vocab_(std::make_unique<Vocab>(std::move(vocab))),
      encoder_(std::move(encoder)),
      config_(config),
      heads_(*inventory_, encoder_->hidden_size(), head_seed),
      builder_(std::make_unique<ExampleBuilder>(*inventory_, *vocab_, config_.input)) {
  if (vocab_->size() > encoder_->vocab_size()) {
    throw std::invalid_argument("vocabulary is larger than the encoder embedding table");
  }
  if (config_.input.max_seq_length > encoder_->max_positions()) {
    throw std::invalid_argument("max_seq_length exceeds the encoder position table");
  }
  if (config_.input.segment_scheme == SegmentScheme::kThree && encoder_->type_vocab_size() < 3) {
    throw std::invalid_argument("three-segment inputs need an encoder with 3 token types");
  }
}

std::vector<Parameter*> CdstModel::parameters() {
  auto out = encoder_->parameters();
  auto h = heads_.parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<const Parameter*> CdstModel::parameters() const {
  auto p = const_cast<CdstModel*>(this)->parameters();
  return {p.begin(), p.end()};
}

void CdstModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

RawOutput CdstModel::forward(const EncodedExample& example) const {
  return forward_train(example, nullptr);
}

RawOutput CdstModel::forward_train(const EncodedExample& example, Tape* tape) const {
  encoder_->validate_input(example.tokens, example.segment_ids);
  std::unique_ptr<EncoderTape> encoder_tape;
  Matrix hidden = encoder_->forward(example.tokens, example.segment_ids,
                                    tape ? &encoder_tape : nullptr);
  const std::size_t head = heads_.index_of(example.slot);
  const HeadPair& h = heads_.at(head);
  RawOutput out;
  out.cls_logits = (hidden.row(0) * h.cls_weight.value + h.cls_bias.value.row(0)).transpose();
  Matrix span = hidden * h.span_weight.value;
  span.rowwise() += h.span_bias.value.row(0);
  out.start_logits = span.col(0);
  out.end_logits = span.col(1);
  if (config_.mask_invalid_positions) out.candidates = example.span_candidates();
  if (tape) {
    tape->encoder = std::move(encoder_tape);
    tape->hidden = std::move(hidden);
    tape->head = head;
  }
  return out;
}

void CdstModel::backward(const Tape& tape, const Eigen::Vector2d& d_cls_logits,
                         const Vector& d_start, const Vector& d_end) {
  HeadPair& h = heads_.at(tape.head);
  const Matrix& hidden = tape.hidden;
  Matrix d_span(hidden.rows(), 2);
  d_span.col(0) = d_start;
  d_span.col(1) = d_end;

  h.cls_weight.grad.noalias() += hidden.row(0).transpose() * d_cls_logits.transpose();
  h.cls_bias.grad.row(0) += d_cls_logits.transpose();
  h.span_weight.grad.noalias() += hidden.transpose() * d_span;
  h.span_bias.grad.row(0) += d_span.colwise().sum();

  Matrix d_hidden = d_span * h.span_weight.value.transpose();
  d_hidden.row(0) += (h.cls_weight.value * d_cls_logits).transpose();
  encoder_->backward(*tape.encoder, d_hidden);
}

CorefPrediction CdstModel::predict(const EncodedExample& example) const {
  return predict(example, config_.threshold);
}

CorefPrediction CdstModel::predict(const EncodedExample& example, double threshold) const {
  const EncoderOutput encoded = encoder_->encode(example);
  const SlotTypeProbs probs = classify_slot_type(encoded.cls_vector(), example.slot, heads_);
  const auto candidates =
      config_.mask_invalid_positions ? example.span_candidates() : std::vector<std::uint8_t>{};
  CorefPrediction out;
  out.slot = example.slot.name();
  out.p_coref = probs.p_coref;
  // With both the utterance and the slot ablated, a first turn has no text
  // to point into: the span fails to decode.
  const bool any_candidate =
      candidates.empty() || std::find(candidates.begin(), candidates.end(), 1) != candidates.end();
  out.span = {-1, -1};
  if (any_candidate) {
    SpanPrediction span =
        predict_span(encoded.token_vectors(), example.slot, heads_, candidates, config_.span);
    out.span = span.span;
    out.start_dist = std::move(span.start_dist);
    out.end_dist = std::move(span.end_dist);
  }
  if (out.span.start >= 0 && out.span.start <= out.span.end) {
    try {
      out.decoded = decode_span_to_text(example, out.span.start, out.span.end);
    } catch (const SpanDecodeError&) {
      out.decoded.clear();
    }
  }
  if (out.p_coref >= threshold && !out.decoded.empty()) out.value = out.decoded;
  return out;
}

std::map<std::string, CorefPrediction> CdstModel::predict_turn(const Dialogue& dialogue,
                                                               int turn_index) const {
  return predict_turn(dialogue, turn_index, config_.threshold);
}

std::map<std::string, CorefPrediction> CdstModel::predict_turn(const Dialogue& dialogue,
                                                               int turn_index,
                                                               double threshold) const {
  std::map<std::string, CorefPrediction> out;
  for (const auto& slot : *inventory_) {
    out.emplace(slot.name(), predict(builder_->build_input(dialogue, turn_index, slot), threshold));
  }
  return out;
}

std::string CdstModel::config_hash() const {
  std::string vocab_bytes;
  for (const auto& t : vocab_->tokens()) vocab_bytes += t + '\n';
  const json j = {{"model", config_.to_json()},
                  {"encoder", encoder_->config_json()},
                  {"slots", inventory_->to_json()},
                  {"vocab", hex64(fnv1a64(vocab_bytes))}};
  return hex64(fnv1a64(j.dump()));
}

void CdstModel::save(const std::string& dir, const json& extra_manifest) const {
  fs::create_directories(dir);
  vocab_->save((fs::path(dir) / "vocab.txt").string());
  encoder_->save((fs::path(dir) / "encoder").string());
  save_parameters((fs::path(dir) / "heads.bin").string(), heads_.parameters());
  json manifest = {{"format", "cdst-checkpoint-1"},
                   {"config_hash", config_hash()},
                   {"encoder", encoder_->identifier()},
                   {"model", config_.to_json()},
                   {"slots", inventory_->to_json()}};
  for (const auto& [k, v] : extra_manifest.items()) manifest[k] = v;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

std::unique_ptr<CdstModel> CdstModel::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("missing checkpoint manifest in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest in " + dir + ": " + e.what());
  }
  auto model = std::make_unique<CdstModel>(
      SlotInventory::from_json(manifest.at("slots")),
      Vocab::load((fs::path(dir) / "vocab.txt").string()),
      TransformerEncoder::load((fs::path(dir) / "encoder").string()),
      ModelConfig::from_json(manifest.at("model")), 0);
  load_parameters((fs::path(dir) / "heads.bin").string(), model->heads_.parameters());
  return model;
}

}  // namespace cdst
