#ifndef CDST_ENCODER_H_
#define CDST_ENCODER_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cdst/encoding.h"
#include "cdst/tensor.h"
#include "json.hpp"

namespace cdst {

// Last hidden layer for one input: row 0 is the [CLS] vector, row i the
// representation of input token i. One row per input token.
struct EncoderOutput {
  Matrix hidden;

  RowVector cls_vector() const { return hidden.row(0); }
  const Matrix& token_vectors() const { return hidden; }
  int length() const { return static_cast<int>(hidden.rows()); }
  int dim() const { return static_cast<int>(hidden.cols()); }
};

// Activations kept by a training forward pass for the matching backward.
class EncoderTape {
 public:
  virtual ~EncoderTape() = default;
};

// Contextual encoder. The heads only depend on hidden_size(), so any
// implementation can sit under them.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::string identifier() const = 0;
  virtual int hidden_size() const = 0;
  virtual int max_positions() const = 0;
  virtual int vocab_size() const = 0;
  virtual int type_vocab_size() const = 0;

  // Validates the token and segment ids, then runs forward without a tape.
  // Throws std::out_of_range for ids outside the vocabulary and
  // std::length_error for inputs longer than max_positions().
  EncoderOutput encode(const EncodedExample& example) const;
  EncoderOutput encode(std::span<const int> ids, std::span<const int> segments) const;
  void validate_input(std::span<const int> ids, std::span<const int> segments) const;

  // Returns the M x d hidden states; when `tape` is non-null it receives
  // what backward() needs.
  virtual Matrix forward(std::span<const int> ids, std::span<const int> segments,
                         std::unique_ptr<EncoderTape>* tape) const = 0;
  // Accumulates parameter gradients given dLoss/dHidden (M x d).
  virtual void backward(const EncoderTape& tape, const Matrix& d_hidden) = 0;

  virtual std::vector<Parameter*> parameters() = 0;
  std::vector<const Parameter*> parameters() const;

  // Writes config.json and encoder.bin into `dir`.
  virtual void save(const std::string& dir) const = 0;
  virtual nlohmann::json config_json() const = 0;
};

struct TransformerConfig {
  int vocab_size = 0;
  int hidden = 32;
  int layers = 2;
  int heads = 2;
  int intermediate = 64;
  int max_positions = 512;
  int type_vocab_size = 3;
  double layer_norm_eps = 1e-12;
  double init_stddev = 0.02;

  // 2 layers, d = 32, for desk-scale runs.
  static TransformerConfig tiny(int vocab_size, int max_positions = 512);
  // 8 layers, d = 512, 8 heads, 2048 intermediate.
  static TransformerConfig bert_medium(int vocab_size = 30522);

  void validate() const;
  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
};

// BERT-architecture encoder: token + position + segment embeddings with
// layer norm, then post-norm self-attention / GELU feed-forward blocks.
// Dropout is not applied.
class TransformerEncoder final : public Encoder {
 public:
  TransformerEncoder(TransformerConfig config, std::string identifier, std::uint64_t seed);

  // Reads config.json and encoder.bin written by save() or by the
  // checkpoint conversion script.
  static std::unique_ptr<TransformerEncoder> load(const std::string& dir);

  std::string identifier() const override { return identifier_; }
  int hidden_size() const override { return config_.hidden; }
  int max_positions() const override { return config_.max_positions; }
  int vocab_size() const override { return config_.vocab_size; }
  int type_vocab_size() const override { return config_.type_vocab_size; }
  const TransformerConfig& config() const { return config_; }

  Matrix forward(std::span<const int> ids, std::span<const int> segments,
                 std::unique_ptr<EncoderTape>* tape) const override;
  void backward(const EncoderTape& tape, const Matrix& d_hidden) override;

  std::vector<Parameter*> parameters() override;
  using Encoder::parameters;

  void save(const std::string& dir) const override;
  nlohmann::json config_json() const override;

 private:
  struct Layer {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln1_gain, ln1_bias;
    Parameter w1, b1, w2, b2;
    Parameter ln2_gain, ln2_bias;
  };

  TransformerConfig config_;
  std::string identifier_;
  Parameter word_embeddings_, position_embeddings_, type_embeddings_;
  Parameter embedding_ln_gain_, embedding_ln_bias_;
  std::vector<Layer> layers_;
};

std::unique_ptr<Encoder> make_tiny_encoder(int vocab_size, std::uint64_t seed,
                                           int max_positions = 512);
// A converted pretrained checkpoint directory (config.json, encoder.bin,
// vocab.txt); see tools/convert_bert_checkpoint.py.
std::unique_ptr<Encoder> load_pretrained_encoder(const std::string& dir);

}  // namespace cdst

#endif  // CDST_ENCODER_H_
