#ifndef CDST_MODEL_H_
#define CDST_MODEL_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/encoder.h"
#include "cdst/encoding.h"
#include "cdst/slots.h"
#include "cdst/tensor.h"
#include "cdst/tokenizer.h"
#include "json.hpp"

namespace cdst {

// Classification and span parameters for one domain-slot pair. Weights are
// d x 2: column 0/1 of the classifier are the none/coref logits, column 0/1
// of the span head the start/end logits.
struct HeadPair {
  Parameter cls_weight;
  Parameter cls_bias;
  Parameter span_weight;
  Parameter span_bias;
};

// One HeadPair per slot of the inventory, independent of the encoder beyond
// the hidden size.
class SlotHeads {
 public:
  SlotHeads() = default;
  SlotHeads(const SlotInventory& inventory, int hidden_size, std::uint64_t seed,
            double init_stddev = 0.02);

  int hidden_size() const { return hidden_; }
  std::size_t size() const { return heads_.size(); }
  // Throws std::invalid_argument for slots outside the inventory.
  std::size_t index_of(const DomainSlot& slot) const;
  HeadPair& at(std::size_t i) { return heads_.at(i); }
  const HeadPair& at(std::size_t i) const { return heads_.at(i); }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  SlotInventory inventory_;
  int hidden_ = 0;
  std::vector<HeadPair> heads_;
};

struct SlotTypeProbs {
  double p_none = 0.5;
  double p_coref = 0.5;
};

// softmax(W_n^T r + b_n) over {none, coref}.
SlotTypeProbs classify_slot_type(const RowVector& cls_vector, const DomainSlot& slot,
                                 const SlotHeads& heads);

enum class SpanDecoding { kIndependent, kJoint };

struct SpanOptions {
  SpanDecoding decoding = SpanDecoding::kIndependent;
  // kJoint only: maximum end - start + 1.
  int max_span_length = 10;
};

struct SpanPrediction {
  Vector start_logits;
  Vector end_logits;
  Vector start_dist;
  Vector end_dist;
  TokenSpan span;
};

// Per-position start/end logits softmaxed across positions. `candidates`
// marks positions allowed to hold a span (empty = every position); the
// others get probability 0. Independent decoding takes each argmax with
// ties to the lowest index and may return end < start. Throws
// std::invalid_argument when no position is allowed.
SpanPrediction predict_span(const Matrix& token_vectors, const DomainSlot& slot,
                            const SlotHeads& heads, std::span<const std::uint8_t> candidates = {},
                            const SpanOptions& options = {});

// Logits of one example as the loss sees them.
struct RawOutput {
  Eigen::Vector2d cls_logits = Eigen::Vector2d::Zero();
  Vector start_logits;
  Vector end_logits;
  // Positions that take part in the span softmax (empty = all).
  std::vector<std::uint8_t> candidates;
};

struct GoldLabel {
  SlotType slot_type = SlotType::kNone;
  std::optional<TokenSpan> span;
};

struct LossBreakdown {
  double slot_type_loss = 0.0;
  double span_loss = 0.0;
  double total = 0.0;
  double beta = 0.8;
  std::size_t span_examples = 0;

  nlohmann::json to_json() const;
};

// dTotal/dLogits for every example of the batch.
struct LossGradients {
  std::vector<Eigen::Vector2d> cls_logits;
  std::vector<Vector> start_logits;
  std::vector<Vector> end_logits;
};

// total = beta * mean slot-type cross-entropy
//       + (1 - beta) * mean over span-labeled examples of (start CE + end CE) / 2.
// span_loss is 0 when no example carries a span. Throws std::out_of_range
// for gold spans outside the sequence or on a non-candidate position.
LossBreakdown joint_loss(std::span<const RawOutput> outputs, std::span<const GoldLabel> gold,
                         double beta, LossGradients* gradients = nullptr);

struct CorefPrediction {
  std::string slot;
  double p_coref = 0.0;
  Vector start_dist;
  Vector end_dist;
  TokenSpan span;
  // Retrieved text before the classification decision; empty when the span
  // did not decode.
  std::string decoded;
  // decoded when p_coref >= threshold and the span decoded, else "none".
  std::string value = "none";

  nlohmann::json to_json() const;
  static CorefPrediction from_json(const std::string& slot, const nlohmann::json& j);
};

struct ModelConfig {
  InputConfig input;
  double beta = 0.8;
  double threshold = 0.5;
  bool mask_invalid_positions = true;
  SpanOptions span;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// The coreference tracker: encoder, per-slot heads, tokenizer state and the
// input configuration used to build its examples.
class CdstModel {
 public:
  CdstModel(SlotInventory inventory, Vocab vocab, std::unique_ptr<Encoder> encoder,
            ModelConfig config, std::uint64_t head_seed);

  CdstModel(const CdstModel&) = delete;
  CdstModel& operator=(const CdstModel&) = delete;

  const SlotInventory& inventory() const { return *inventory_; }
  const Vocab& vocab() const { return *vocab_; }
  const ModelConfig& config() const { return config_; }
  const ExampleBuilder& builder() const { return *builder_; }
  const Encoder& encoder() const { return *encoder_; }
  Encoder& encoder() { return *encoder_; }
  const SlotHeads& heads() const { return heads_; }
  SlotHeads& heads() { return heads_; }

  void set_threshold(double t) { config_.threshold = t; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

  RawOutput forward(const EncodedExample& example) const;
  CorefPrediction predict(const EncodedExample& example) const;
  CorefPrediction predict(const EncodedExample& example, double threshold) const;

  // Every slot of the inventory for one turn.
  std::map<std::string, CorefPrediction> predict_turn(const Dialogue& dialogue, int turn_index) const;
  std::map<std::string, CorefPrediction> predict_turn(const Dialogue& dialogue, int turn_index,
                                                      double threshold) const;

  // Training pass: forward with activations kept, then backward of the given
  // logit gradients into the parameter gradients.
  struct Tape {
    std::unique_ptr<EncoderTape> encoder;
    Matrix hidden;
    std::size_t head = 0;
  };
  RawOutput forward_train(const EncodedExample& example, Tape* tape) const;
  void backward(const Tape& tape, const Eigen::Vector2d& d_cls_logits, const Vector& d_start,
                const Vector& d_end);

  // Checkpoint directory: manifest.json, vocab.txt, encoder/, heads.bin.
  void save(const std::string& dir, const nlohmann::json& extra_manifest = {}) const;
  static std::unique_ptr<CdstModel> load(const std::string& dir);
  std::string config_hash() const;

 private:
  // Stable addresses for builder_, which points into them.
  std::unique_ptr<SlotInventory> inventory_;
  std::unique_ptr<Vocab> vocab_;
  std::unique_ptr<Encoder> encoder_;
  ModelConfig config_;
  SlotHeads heads_;
  std::unique_ptr<ExampleBuilder> builder_;
};

}  // namespace cdst

#endif  // CDST_MODEL_H_
