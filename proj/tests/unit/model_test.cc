#include "cdst/model.h"

#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "fixtures.h"
#include "oracles.h"

using namespace cdst;

namespace {

const SlotInventory& inventory() {
  static const SlotInventory inv = SlotInventory::multiwoz();
  return inv;
}

const DomainSlot& slot(const std::string& name) { return inventory().at(inventory().require(name)); }

SlotHeads zero_heads(int d) {
  SlotHeads h(inventory(), d, 1);
  for (auto* p : h.parameters()) p->value.setZero();
  return h;
}

RawOutput raw(double z0, double z1, std::vector<double> start = {}, std::vector<double> end = {}) {
  RawOutput o;
  o.cls_logits << z0, z1;
  o.start_logits = Eigen::Map<Vector>(start.data(), static_cast<Eigen::Index>(start.size()));
  o.end_logits = Eigen::Map<Vector>(end.data(), static_cast<Eigen::Index>(end.size()));
  return o;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("classify_slot_type closed forms") {
    SlotHeads h = zero_heads(4);
    const RowVector r = RowVector::Ones(4);
    auto p = classify_slot_type(r, slot("train-day"), h);
    CHECK(p.p_none == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.p_coref == doctest::Approx(0.5).epsilon(1e-12));

    h.at(h.index_of(slot("train-day"))).cls_bias.value(0, 1) = std::log(3.0);
    p = classify_slot_type(r, slot("train-day"), h);
    CHECK(p.p_none == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.p_coref == doctest::Approx(0.75).epsilon(1e-12));
    // Other slots are untouched.
    CHECK(classify_slot_type(r, slot("hotel-area"), h).p_coref == doctest::Approx(0.5));

    CHECK_THROWS_AS(classify_slot_type(RowVector::Ones(5), slot("train-day"), h), std::invalid_argument);
  }

  TEST_CASE("predict_span closed forms") {
    SlotHeads h = zero_heads(1);
    HeadPair& hp = h.at(h.index_of(slot("hotel-name")));
    hp.span_weight.value << 1.0, 1.0;

    const Matrix one = Matrix::Constant(1, 1, 0.3);
    auto s = predict_span(one, slot("hotel-name"), h);
    CHECK(s.start_dist(0) == 1.0);
    CHECK(s.end_dist(0) == 1.0);
    CHECK(s.span == TokenSpan{0, 0});

    // Unique maxima at 4 (start) and 6 (end).
    hp.span_weight.value << 1.0, -1.0;
    Matrix h8 = Matrix::Zero(8, 1);
    h8(4, 0) = 2.0;
    h8(6, 0) = -2.0;
    s = predict_span(h8, slot("hotel-name"), h);
    CHECK(s.span == TokenSpan{4, 6});
    CHECK(s.start_dist.sum() == doctest::Approx(1.0));

    // Ties go to the lowest index.
    const Matrix flat = Matrix::Zero(5, 1);
    CHECK(predict_span(flat, slot("hotel-name"), h).span == TokenSpan{0, 0});

    // Masked positions get probability zero and are never chosen.
    const std::vector<std::uint8_t> mask = {0, 0, 1, 1, 0, 0, 0, 0};
    s = predict_span(h8, slot("hotel-name"), h, mask);
    CHECK(s.start_dist(4) == 0.0);
    CHECK(s.span.start >= 2);
    CHECK(s.span.start <= 3);
    CHECK(s.start_dist(2) + s.start_dist(3) == doctest::Approx(1.0));

    const std::vector<std::uint8_t> none(8, 0);
    CHECK_THROWS_AS(predict_span(h8, slot("hotel-name"), h, none), std::invalid_argument);
    CHECK_THROWS_AS(predict_span(Matrix(0, 1), slot("hotel-name"), h), std::invalid_argument);
  }

  TEST_CASE("joint decoding respects start <= end and the length cap") {
    SlotHeads h = zero_heads(2);
    HeadPair& hp = h.at(h.index_of(slot("hotel-name")));
    hp.span_weight.value << 1.0, 0.0, 0.0, 1.0;
    Matrix x = Matrix::Zero(20, 2);
    x(15, 0) = 5.0;  // best start
    x(3, 1) = 4.0;   // best end, before the start
    x(16, 1) = 1.0;
    auto independent = predict_span(x, slot("hotel-name"), h);
    CHECK(independent.span == TokenSpan{15, 3});
    SpanOptions joint;
    joint.decoding = SpanDecoding::kJoint;
    auto j = predict_span(x, slot("hotel-name"), h, {}, joint);
    CHECK(j.span == TokenSpan{15, 16});
    joint.max_span_length = 1;
    CHECK(predict_span(x, slot("hotel-name"), h, {}, joint).span == TokenSpan{15, 15});
  }

  TEST_CASE("joint_loss closed forms") {
    const std::vector<RawOutput> uniform = {raw(0, 0), raw(1, 1)};
    const std::vector<GoldLabel> none_gold = {{SlotType::kNone, {}}, {SlotType::kCoref, {}}};
    auto l = joint_loss(uniform, none_gold, 0.8);
    CHECK(std::abs(l.total - 0.8 * std::log(2.0)) < 1e-9);
    CHECK(l.span_loss == 0.0);
    CHECK(l.span_examples == 0);

    const std::vector<RawOutput> perfect = {raw(800, -800, {-800, 800, -800}, {-800, -800, 800})};
    const std::vector<GoldLabel> gold = {{SlotType::kNone, TokenSpan{1, 2}}};
    l = joint_loss(perfect, gold, 0.8);
    CHECK(std::abs(l.total) < 1e-9);
  }

  TEST_CASE("joint_loss: span loss averages over span-labeled examples only") {
    const std::vector<RawOutput> out = {raw(0, 0, {0, 0}, {0, 0}), raw(0, 0, {0, 0, 0, 0}, {0, 0, 0, 0})};
    const std::vector<GoldLabel> gold = {{SlotType::kCoref, TokenSpan{0, 1}}, {SlotType::kNone, {}}};
    const auto l = joint_loss(out, gold, 0.5);
    CHECK(l.span_examples == 1);
    CHECK(l.span_loss == doctest::Approx(std::log(2.0)));
    CHECK(l.total == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0)));
  }

  TEST_CASE("joint_loss errors") {
    const std::vector<RawOutput> out = {raw(0, 0, {0, 0}, {0, 0})};
    const std::vector<GoldLabel> bad = {{SlotType::kCoref, TokenSpan{0, 2}}};
    CHECK_THROWS_AS(joint_loss(out, bad, 0.8), std::out_of_range);
    const std::vector<GoldLabel> ok = {{SlotType::kCoref, TokenSpan{0, 1}}};
    CHECK_THROWS_AS(joint_loss(out, ok, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(joint_loss({}, {}, 0.8), std::invalid_argument);
    RawOutput masked = out[0];
    masked.candidates = {1, 0};
    const std::vector<RawOutput> m = {masked};
    CHECK_THROWS_AS(joint_loss(m, ok, 0.8), std::out_of_range);
  }

  TEST_CASE("joint_loss gradients match finite differences of the logits") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<RawOutput> out;
    for (int i = 0; i < 3; ++i) {
      RawOutput o;
      o.cls_logits << n(rng), n(rng);
      o.start_logits = Vector::NullaryExpr(6, [&] { return n(rng); });
      o.end_logits = Vector::NullaryExpr(6, [&] { return n(rng); });
      o.candidates = {0, 1, 1, 1, 1, 0};
      out.push_back(o);
    }
    const std::vector<GoldLabel> gold = {{SlotType::kCoref, TokenSpan{1, 3}}, {SlotType::kNone, {}},
                                         {SlotType::kCoref, TokenSpan{4, 4}}};
    LossGradients g;
    joint_loss(out, gold, 0.8, &g);
    const double h = 1e-6;
    auto total = [&] { return joint_loss(out, gold, 0.8).total; };
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (int k = 0; k < 2; ++k) {
        const double s = out[i].cls_logits(k);
        out[i].cls_logits(k) = s + h;
        const double up = total();
        out[i].cls_logits(k) = s - h;
        const double down = total();
        out[i].cls_logits(k) = s;
        CHECK(g.cls_logits[i](k) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
      }
      for (int p = 1; p < 5; ++p) {
        const double s = out[i].start_logits(p);
        out[i].start_logits(p) = s + h;
        const double up = total();
        out[i].start_logits(p) = s - h;
        const double down = total();
        out[i].start_logits(p) = s;
        CHECK(std::abs(g.start_logits[i](p) - (up - down) / (2 * h)) < 1e-7);
      }
    }
  }

  TEST_CASE("predict_turn covers every slot; threshold above 1 gives all none") {
    const auto dialogues = testing::fixture5();
    const auto model = testing::tiny_model(dialogues);
    const auto preds = model->predict_turn(dialogues[0], 3);
    CHECK(preds.size() == 30);
    for (const auto& [name, p] : preds) {
      CHECK(p.p_coref >= 0.0);
      CHECK(p.p_coref <= 1.0);
      CHECK(p.start_dist.sum() == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(p.end_dist.sum() == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (const auto& [name, p] : model->predict_turn(dialogues[0], 3, 1.01)) CHECK(p.value == "none");
    // Threshold 0 keeps every decodable span.
    for (const auto& [name, p] : model->predict_turn(dialogues[0], 3, 0.0)) {
      CHECK((p.value == "none") == p.decoded.empty());
    }
  }

  TEST_CASE("encoder output shape, determinism and finiteness on the fixture") {
    const auto dialogues = testing::fixture5();
    const auto model = testing::tiny_model(dialogues);
    const auto ex = model->builder().build_input(dialogues[0], 2, slot("train-day"));
    const auto a = model->encoder().encode(ex);
    const auto b = model->encoder().encode(ex);
    CHECK(a.length() == ex.size());
    CHECK(a.dim() == 32);
    CHECK(a.hidden == b.hidden);
    CHECK(a.hidden.allFinite());
    CHECK(a.hidden.norm() > 0.0);
  }

  TEST_CASE("checkpoint round trip") {
    const auto dialogues = testing::fixture5();
    const auto model = testing::tiny_model(dialogues);
    const auto dir = (std::filesystem::temp_directory_path() / "cdst_model_test").string();
    std::filesystem::remove_all(dir);
    model->save(dir);
    const auto back = CdstModel::load(dir);
    CHECK(back->config_hash() == model->config_hash());
    const auto ex = model->builder().build_input(dialogues[1], 2, slot("taxi-destination"));
    const auto p1 = model->predict(ex);
    const auto p2 = back->predict(ex);
    CHECK(p1.p_coref == p2.p_coref);
    CHECK(p1.start_dist == p2.start_dist);
    CHECK(p1.to_json() == p2.to_json());
  }

  TEST_CASE("CorefPrediction json round trip") {
    CorefPrediction p;
    p.slot = "train-day";
    p.p_coref = 0.75;
    p.span = {3, 4};
    p.decoded = "saturday";
    p.value = "saturday";
    const auto back = CorefPrediction::from_json("train-day", p.to_json());
    CHECK(back.to_json() == p.to_json());
  }

  TEST_CASE("three-segment inputs need three token types") {
    const Vocab vocab = Vocab::build({"hotel area"});
    auto config = TransformerConfig::tiny(vocab.size(), 64);
    config.type_vocab_size = 2;
    ModelConfig mc;
    mc.input.max_seq_length = 64;
    mc.input.segment_scheme = SegmentScheme::kThree;
    CHECK_THROWS_AS(CdstModel(inventory(), vocab, std::make_unique<TransformerEncoder>(config, "two-type", 1), mc, 1),
                    std::invalid_argument);
    mc.input.segment_scheme = SegmentScheme::kTwo;
    CHECK_NOTHROW(CdstModel(inventory(), vocab, std::make_unique<TransformerEncoder>(config, "two-type", 1), mc, 1));
  }
}
