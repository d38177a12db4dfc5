#include "cdst/encoder.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cdst {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct NormCache {
  Matrix normed;
  Vector inv_std;
};

Matrix layer_norm(const Matrix& x, const Parameter& gain, const Parameter& bias, double eps,
                  NormCache* cache) {
  const Eigen::Index rows = x.rows();
  NormCache local;
  NormCache& c = cache ? *cache : local;
  c.normed.resize(rows, x.cols());
  c.inv_std.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    c.inv_std(r) = 1.0 / std::sqrt(var + eps);
    c.normed.row(r) = centered * c.inv_std(r);
  }
  Matrix out = c.normed.array().rowwise() * gain.value.row(0).array();
  out.rowwise() += bias.value.row(0);
  return out;
}

Matrix layer_norm_backward(const Matrix& d_out, const NormCache& c, Parameter& gain,
                           Parameter& bias) {
  gain.grad.row(0) += (d_out.array() * c.normed.array()).colwise().sum().matrix();
  bias.grad.row(0) += d_out.colwise().sum();
  const Matrix d_norm = d_out.array().rowwise() * gain.value.row(0).array();
  const double n = static_cast<double>(d_out.cols());
  Matrix dx(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const double mean_d = d_norm.row(r).sum() / n;
    const double mean_dn = d_norm.row(r).dot(c.normed.row(r)) / n;
    dx.row(r) = c.inv_std(r) *
                (d_norm.row(r).array() - mean_d - c.normed.row(r).array() * mean_dn).matrix();
  }
  return dx;
}

Matrix affine(const Matrix& x, const Parameter& w, const Parameter& b) {
  Matrix out = x * w.value;
  out.rowwise() += b.value.row(0);
  return out;
}

// Returns dX; accumulates dW, db.
Matrix affine_backward(const Matrix& x, const Matrix& d_out, Parameter& w, Parameter& b) {
  w.grad.noalias() += x.transpose() * d_out;
  b.grad.row(0) += d_out.colwise().sum();
  return d_out * w.value.transpose();
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

struct LayerTape {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix context;
  NormCache ln1;
  Matrix attn_norm;  // output of the first layer norm
  Matrix ffn_pre;    // before GELU
  Matrix ffn_act;    // after GELU
  NormCache ln2;
};

struct TransformerTape final : EncoderTape {
  std::vector<int> ids;
  std::vector<int> segments;
  NormCache embedding_ln;
  std::vector<LayerTape> layers;
};

Parameter make_param(const std::string& name, int rows, int cols) {
  return Parameter(name, rows, cols);
}

}  // namespace

// Encoder --------------------------------------------------------------------

EncoderOutput Encoder::encode(const EncodedExample& example) const {
  return encode(example.tokens, example.segment_ids);
}

EncoderOutput Encoder::encode(std::span<const int> ids, std::span<const int> segments) const {
  validate_input(ids, segments);
  return {forward(ids, segments, nullptr)};
}

void Encoder::validate_input(std::span<const int> ids, std::span<const int> segments) const {
  if (ids.empty()) throw std::invalid_argument("empty encoder input");
  if (ids.size() != segments.size()) throw std::invalid_argument("token/segment length mismatch");
  if (static_cast<int>(ids.size()) > max_positions()) {
    throw std::length_error("input longer than encoder max positions");
  }
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw std::out_of_range("token id outside encoder vocabulary");
  }
  for (int s : segments) {
    if (s < 0 || s >= type_vocab_size()) throw std::out_of_range("segment id outside encoder range");
  }
}

std::vector<const Parameter*> Encoder::parameters() const {
  auto mutable_params = const_cast<Encoder*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

// TransformerConfig -----------------------------------------------------------

TransformerConfig TransformerConfig::tiny(int vocab_size, int max_positions) {
  TransformerConfig c;
  c.vocab_size = vocab_size;
  c.max_positions = max_positions;
  return c;
}

TransformerConfig TransformerConfig::bert_medium(int vocab_size) {
  TransformerConfig c;
  c.vocab_size = vocab_size;
  c.hidden = 512;
  c.layers = 8;
  c.heads = 8;
  c.intermediate = 2048;
  c.max_positions = 512;
  c.type_vocab_size = 2;
  return c;
}

void TransformerConfig::validate() const {
  if (vocab_size <= 0 || hidden <= 0 || layers < 0 || heads <= 0 || intermediate <= 0 ||
      max_positions <= 0 || type_vocab_size <= 0) {
    throw std::invalid_argument("transformer dimensions must be positive");
  }
  if (hidden % heads != 0) throw std::invalid_argument("hidden size must divide into heads");
}

json TransformerConfig::to_json() const {
  return {{"vocab_size", vocab_size},         {"hidden_size", hidden},
          {"num_hidden_layers", layers},      {"num_attention_heads", heads},
          {"intermediate_size", intermediate}, {"max_position_embeddings", max_positions},
          {"type_vocab_size", type_vocab_size}, {"layer_norm_eps", layer_norm_eps},
          {"initializer_range", init_stddev}};
}

TransformerConfig TransformerConfig::from_json(const json& j) {
  TransformerConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden = j.at("hidden_size").get<int>();
  c.layers = j.at("num_hidden_layers").get<int>();
  c.heads = j.at("num_attention_heads").get<int>();
  c.intermediate = j.at("intermediate_size").get<int>();
  c.max_positions = j.at("max_position_embeddings").get<int>();
  c.type_vocab_size = j.at("type_vocab_size").get<int>();
  c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
  c.init_stddev = j.value("initializer_range", 0.02);
  c.validate();
  return c;
}

// TransformerEncoder -----------------------------------------------------------

TransformerEncoder::TransformerEncoder(TransformerConfig config, std::string identifier,
                                       std::uint64_t seed)
    : config_(config), identifier_(std::move(identifier)) {
  config_.validate();
  const int d = config_.hidden;
  word_embeddings_ = make_param("embeddings.word", config_.vocab_size, d);
  position_embeddings_ = make_param("embeddings.position", config_.max_positions, d);
  type_embeddings_ = make_param("embeddings.type", config_.type_vocab_size, d);
  embedding_ln_gain_ = make_param("embeddings.ln.gain", 1, d);
  embedding_ln_bias_ = make_param("embeddings.ln.bias", 1, d);
  embedding_ln_gain_.value.setOnes();
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    Layer l;
    l.wq = make_param(p + "query.weight", d, d);
    l.bq = make_param(p + "query.bias", 1, d);
    l.wk = make_param(p + "key.weight", d, d);
    l.bk = make_param(p + "key.bias", 1, d);
    l.wv = make_param(p + "value.weight", d, d);
    l.bv = make_param(p + "value.bias", 1, d);
    l.wo = make_param(p + "attention_output.weight", d, d);
    l.bo = make_param(p + "attention_output.bias", 1, d);
    l.ln1_gain = make_param(p + "attention_ln.gain", 1, d);
    l.ln1_bias = make_param(p + "attention_ln.bias", 1, d);
    l.w1 = make_param(p + "intermediate.weight", d, config_.intermediate);
    l.b1 = make_param(p + "intermediate.bias", 1, config_.intermediate);
    l.w2 = make_param(p + "output.weight", config_.intermediate, d);
    l.b2 = make_param(p + "output.bias", 1, d);
    l.ln2_gain = make_param(p + "output_ln.gain", 1, d);
    l.ln2_bias = make_param(p + "output_ln.bias", 1, d);
    l.ln1_gain.value.setOnes();
    l.ln2_gain.value.setOnes();
    layers_.push_back(std::move(l));
  }
  std::mt19937_64 rng(seed);
  for (Parameter* p : parameters()) {
    if (p->value.rows() > 1) p->fill_normal(rng, config_.init_stddev);
  }
}

std::vector<Parameter*> TransformerEncoder::parameters() {
  std::vector<Parameter*> out = {&word_embeddings_, &position_embeddings_, &type_embeddings_,
                                 &embedding_ln_gain_, &embedding_ln_bias_};
  for (auto& l : layers_) {
    for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain,
                         &l.ln1_bias, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias}) {
      out.push_back(p);
    }
  }
  return out;
}

Matrix TransformerEncoder::forward(std::span<const int> ids, std::span<const int> segments,
                                   std::unique_ptr<EncoderTape>* tape_out) const {
  const int m = static_cast<int>(ids.size());
  const int d = config_.hidden;
  const int heads = config_.heads;
  const int head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::unique_ptr<TransformerTape> tape;
  if (tape_out) {
    tape = std::make_unique<TransformerTape>();
    tape->ids.assign(ids.begin(), ids.end());
    tape->segments.assign(segments.begin(), segments.end());
    tape->layers.resize(layers_.size());
  }

  Matrix x(m, d);
  for (int i = 0; i < m; ++i) {
    x.row(i) = word_embeddings_.value.row(ids[i]) + position_embeddings_.value.row(i) +
               type_embeddings_.value.row(segments[i]);
  }
  Matrix h = layer_norm(x, embedding_ln_gain_, embedding_ln_bias_, config_.layer_norm_eps,
                        tape ? &tape->embedding_ln : nullptr);

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    LayerTape local;
    LayerTape& t = tape ? tape->layers[li] : local;
    t.q = affine(h, l.wq, l.bq);
    t.k = affine(h, l.wk, l.bk);
    t.v = affine(h, l.wv, l.bv);
    t.context.resize(m, d);
    t.probs.resize(heads);
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = t.q.middleCols(hd * head_dim, head_dim);
      const auto k = t.k.middleCols(hd * head_dim, head_dim);
      const auto v = t.v.middleCols(hd * head_dim, head_dim);
      Matrix scores = (q * k.transpose()) * scale;
      softmax_rows(scores);
      t.context.middleCols(hd * head_dim, head_dim) = scores * v;
      t.probs[hd] = std::move(scores);
    }
    Matrix attn = affine(t.context, l.wo, l.bo);
    attn += h;
    t.attn_norm = layer_norm(attn, l.ln1_gain, l.ln1_bias, config_.layer_norm_eps, &t.ln1);
    t.ffn_pre = affine(t.attn_norm, l.w1, l.b1);
    t.ffn_act = t.ffn_pre.unaryExpr([](double v) { return gelu(v); });
    Matrix ffn = affine(t.ffn_act, l.w2, l.b2);
    ffn += t.attn_norm;
    t.input = std::move(h);
    h = layer_norm(ffn, l.ln2_gain, l.ln2_bias, config_.layer_norm_eps, &t.ln2);
  }
  if (tape_out) *tape_out = std::move(tape);
  return h;
}

void TransformerEncoder::backward(const EncoderTape& base_tape, const Matrix& d_hidden) {
  const auto* tape = dynamic_cast<const TransformerTape*>(&base_tape);
  if (tape == nullptr) throw std::invalid_argument("tape was not produced by this encoder");
  const int d = config_.hidden;
  const int heads = config_.heads;
  const int head_dim = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix dh = d_hidden;
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    Layer& l = layers_[li];
    const LayerTape& t = tape->layers[li];
    // out = LN2(attn_norm + FFN(attn_norm))
    Matrix d_sum2 = layer_norm_backward(dh, t.ln2, l.ln2_gain, l.ln2_bias);
    Matrix d_act = affine_backward(t.ffn_act, d_sum2, l.w2, l.b2);
    Matrix d_pre = d_act.array() * t.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    Matrix d_attn_norm = affine_backward(t.attn_norm, d_pre, l.w1, l.b1);
    d_attn_norm += d_sum2;
    // attn_norm = LN1(input + O(context))
    Matrix d_sum1 = layer_norm_backward(d_attn_norm, t.ln1, l.ln1_gain, l.ln1_bias);
    Matrix d_context = affine_backward(t.context, d_sum1, l.wo, l.bo);
    Matrix dq(t.q.rows(), d), dk(t.k.rows(), d), dv(t.v.rows(), d);
    for (int hd = 0; hd < heads; ++hd) {
      const auto q = t.q.middleCols(hd * head_dim, head_dim);
      const auto k = t.k.middleCols(hd * head_dim, head_dim);
      const auto v = t.v.middleCols(hd * head_dim, head_dim);
      const Matrix& p = t.probs[hd];
      const auto dc = d_context.middleCols(hd * head_dim, head_dim);
      const Matrix dp = dc * v.transpose();
      dv.middleCols(hd * head_dim, head_dim) = p.transpose() * dc;
      Matrix ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
      ds *= scale;
      dq.middleCols(hd * head_dim, head_dim) = ds * k;
      dk.middleCols(hd * head_dim, head_dim) = ds.transpose() * q;
    }
    Matrix d_input = d_sum1;
    d_input += affine_backward(t.input, dq, l.wq, l.bq);
    d_input += affine_backward(t.input, dk, l.wk, l.bk);
    d_input += affine_backward(t.input, dv, l.wv, l.bv);
    dh = std::move(d_input);
  }
  const Matrix dx = layer_norm_backward(dh, tape->embedding_ln, embedding_ln_gain_,
                                        embedding_ln_bias_);
  for (int i = 0; i < static_cast<int>(tape->ids.size()); ++i) {
    word_embeddings_.grad.row(tape->ids[i]) += dx.row(i);
    position_embeddings_.grad.row(i) += dx.row(i);
    type_embeddings_.grad.row(tape->segments[i]) += dx.row(i);
  }
}

json TransformerEncoder::config_json() const {
  json j = config_.to_json();
  j["identifier"] = identifier_;
  return j;
}

void TransformerEncoder::save(const std::string& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "config.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write encoder config in " + dir);
    out << config_json().dump(2) << '\n';
  }
  const auto params = parameters();
  save_parameters((fs::path(dir) / "encoder.bin").string(), params);
}

std::unique_ptr<TransformerEncoder> TransformerEncoder::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "config.json");
  if (!in) throw std::runtime_error("missing encoder config.json in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed encoder config in " + dir + ": " + e.what());
  }
  auto encoder = std::make_unique<TransformerEncoder>(
      TransformerConfig::from_json(j), j.value("identifier", std::string("transformer")), 0);
  load_parameters((fs::path(dir) / "encoder.bin").string(), encoder->parameters());
  return encoder;
}

std::unique_ptr<Encoder> make_tiny_encoder(int vocab_size, std::uint64_t seed, int max_positions) {
  return std::make_unique<TransformerEncoder>(TransformerConfig::tiny(vocab_size, max_positions),
                                              "tiny-transformer", seed);
}

std::unique_ptr<Encoder> load_pretrained_encoder(const std::string& dir) {
  return TransformerEncoder::load(dir);
}

}  // namespace cdst
