#include "cdst/corpus.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.h"

using namespace cdst;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cdst_corpus_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Dialogue& by_id(const std::vector<Dialogue>& ds, const std::string& id) {
  for (const auto& d : ds) {
    if (d.dialogue_id == id) return d;
  }
  throw std::runtime_error("missing " + id);
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("three-dialogue fixture loads with its turn counts") {
    LoadReport report;
    const auto ds = load_multiwoz(testing::data_path("fixture3"), SplitSpec{},
                                  SlotInventory::multiwoz(), &report);
    REQUIRE(ds.size() == 3);
    CHECK(by_id(ds, "FIX01.json").turns.size() == 4);
    CHECK(by_id(ds, "FIX02.json").turns.size() == 4);
    CHECK(by_id(ds, "FIX03.json").turns.size() == 3);
    CHECK(report.skipped == 0);
    for (const auto& d : ds) {
      CHECK(d.split == Split::kTrain);
      for (std::size_t i = 0; i < d.turns.size(); ++i) CHECK(d.turns[i].turn_index == static_cast<int>(i));
    }
  }

  TEST_CASE("splits follow the list files") {
    const auto ds = testing::fixture5();
    CHECK(by_id(ds, "FIX04.json").split == Split::kDev);
    CHECK(by_id(ds, "FIX05.json").split == Split::kTest);
    CHECK(select_split(ds, Split::kTrain).size() == 3);
  }

  TEST_CASE("gold states come from the system metadata and are normalized") {
    const auto ds = testing::fixture5();
    const auto& d = by_id(ds, "FIX01.json");
    CHECK(d.turns[0].gold_state.get("hotel-area") == "north");
    CHECK(d.turns[0].gold_state.get("hotel-parking") == "yes");
    CHECK(d.turns[0].gold_state.get("train-day") == "none");
    CHECK(d.turns[3].gold_state.get("train-day") == "saturday");
    CHECK(d.turns[3].gold_state.get("hotel-book day") == "saturday");
    CHECK(d.turns[1].user_utterance == "yes please, book it for 2 people for 3 nights starting saturday.");
    CHECK(d.turns[0].gold_state.covers(SlotInventory::multiwoz()));
  }

  TEST_CASE("empty directory is a load error") {
    const auto dir = scratch_dir("empty");
    CHECK_THROWS_AS(load_multiwoz(dir.string(), SplitSpec{}, SlotInventory::multiwoz()), LoadError);
  }

  TEST_CASE("malformed dialogue is skipped and counted") {
    const auto dir = scratch_dir("malformed");
    std::ofstream(dir / "data.json")
        << R"({"OK.json": {"log": [{"text": "hi"}, {"text": "hello", "metadata": {}}]},)"
        << R"( "BAD.json": {"log": [{"text": "only user"}]}})";
    std::ofstream(dir / "valListFile.txt");
    std::ofstream(dir / "testListFile.txt");
    LoadReport report;
    const auto ds = load_multiwoz(dir.string(), SplitSpec{}, SlotInventory::multiwoz(), &report);
    CHECK(ds.size() == 1);
    CHECK(report.skipped == 1);
  }

  TEST_CASE("same-day-as-the-hotel label: train-day resolves to saturday in an earlier turn") {
    const auto ds = testing::fixture5();
    const auto& t = by_id(ds, "FIX01.json").turns[3];
    REQUIRE(t.coref_labels.size() == 1);
    const auto& l = t.coref_labels[0];
    CHECK(l.slot == "train-day");
    CHECK(l.value == "saturday");
    CHECK(l.source_turn == 1);
    CHECK(l.source_speaker == Speaker::kUser);
    const auto& src = by_id(ds, "FIX01.json").turns[1].user_utterance;
    CHECK(src.substr(l.char_start, l.char_end - l.char_start) == "saturday");
  }

  TEST_CASE("labels without offsets resolve to the most recent occurrence") {
    const auto ds = testing::fixture5();
    const auto& l = by_id(ds, "FIX01.json").turns[1].coref_labels.at(0);
    CHECK(l.slot == "hotel-name");
    CHECK(l.source_turn == 0);
    CHECK(l.source_speaker == Speaker::kSystem);
    CHECK(l.char_start == 0);
    const auto& taxi = by_id(ds, "FIX02.json").turns[2].coref_labels;
    REQUIRE(taxi.size() == 2);
    // "caffe uno" occurs in the system side of turn 0 and the user side of
    // turn 1; turn 1 is more recent.
    CHECK(taxi[0].source_turn == 1);
    CHECK(taxi[0].source_speaker == Speaker::kUser);
  }

  TEST_CASE("empty annotation file leaves dialogues unchanged") {
    const auto dir = scratch_dir("empty_annotations");
    std::ofstream(dir / "coref.json");
    const auto inv = SlotInventory::multiwoz();
    const auto plain = load_multiwoz(testing::data_path("fixture5"), SplitSpec{}, inv);
    CorefAttachReport report;
    const auto attached = attach_coref_annotations(plain, (dir / "coref.json").string(), inv, &report);
    CHECK(report.attached == 0);
    REQUIRE(attached.size() == plain.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
      CHECK(dialogue_to_json(attached[i]) == dialogue_to_json(plain[i]));
    }
  }

  TEST_CASE("mis-offset annotation: one alignment failure, nothing attached") {
    const auto inv = SlotInventory::multiwoz();
    const auto plain = load_multiwoz(testing::data_path("fixture5"), SplitSpec{}, inv);
    CorefAttachReport report;
    const auto ds = attach_coref_annotations(plain, testing::data_path("coref_misaligned.json"), inv, &report);
    CHECK(report.alignment_failures == 1);
    CHECK(report.attached == 0);
    CHECK(coref_statistics(ds).labels == 0);
  }

  TEST_CASE("unknown dialogue, turn and slot are counted and skipped") {
    const auto inv = SlotInventory::multiwoz();
    const auto plain = load_multiwoz(testing::data_path("fixture5"), SplitSpec{}, inv);
    const nlohmann::json ann = {
        {"NOPE.json", {{"0", {{{"slot", "hotel-area"}, {"value", "north"}}}}}},
        {"FIX01.json", {{"9", {{{"slot", "hotel-area"}, {"value", "north"}}}},
                        {"2", {{{"slot", "police-name"}, {"value", "x"}}}}}}};
    CorefAttachReport report;
    attach_coref_annotations(plain, ann, inv, &report);
    CHECK(report.unknown_dialogue == 1);
    CHECK(report.unknown_turn == 1);
    CHECK(report.unknown_slot == 1);
    CHECK(report.attached == 0);
  }

  TEST_CASE("current-turn antecedents are accepted and counted") {
    const auto inv = SlotInventory::multiwoz();
    const auto plain = load_multiwoz(testing::data_path("fixture5"), SplitSpec{}, inv);
    const nlohmann::json ann = {{"FIX01.json", {{"0", {{{"slot", "hotel-area"}, {"value", "north"}}}}}}};
    CorefAttachReport report;
    const auto ds = attach_coref_annotations(plain, ann, inv, &report);
    CHECK(report.attached == 1);
    CHECK(report.current_turn_antecedents == 1);
  }

  TEST_CASE("coref_statistics counts by hand") {
    auto ds = testing::fixture5();
    auto stats = coref_statistics(ds);
    CHECK(stats.dialogues == 5);
    CHECK(stats.coref_dialogues == 5);
    CHECK(stats.labels == 8);
    CHECK(stats.distinct_slots() == 7);

    // Two of four dialogues labeled.
    ds.pop_back();
    for (auto& t : ds[2].turns) t.coref_labels.clear();
    for (auto& t : ds[3].turns) t.coref_labels.clear();
    CHECK(coref_statistics(ds).coref_dialogue_fraction == doctest::Approx(0.5));

    for (auto& d : ds) {
      for (auto& t : d.turns) t.coref_labels.clear();
    }
    CHECK(coref_statistics(ds).coref_dialogue_fraction == 0.0);
  }

  TEST_CASE("corpus file round trip") {
    const auto ds = testing::fixture5();
    const auto dir = scratch_dir("roundtrip");
    write_corpus((dir / "corpus.jsonl").string(), ds);
    const auto back = read_corpus((dir / "corpus.jsonl").string());
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(dialogue_to_json(back[i]) == dialogue_to_json(ds[i]));
  }

  TEST_CASE("BeliefState treats none and absent alike") {
    BeliefState a, b;
    a.set("hotel-area", "none");
    CHECK(a == b);
    b.set("hotel-area", "north");
    CHECK_FALSE(a == b);
    CHECK(BeliefState().get("train-day") == "none");
  }

  TEST_CASE("split names") {
    CHECK(split_from_string("val") == Split::kDev);
    CHECK(split_from_string("dev") == Split::kDev);
    CHECK(to_string(Split::kTest) == "test");
    CHECK_THROWS(split_from_string("bogus"));
  }
}
