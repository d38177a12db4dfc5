#ifndef CDST_TESTS_FIXTURES_H_
#define CDST_TESTS_FIXTURES_H_

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdst/corpus.h"
#include "cdst/model.h"
#include "cdst/slots.h"
#include "cdst/training.h"

namespace cdst::testing {

inline std::string data_path(const std::string& rel) {
  return std::string(CDST_TEST_DATA) + "/" + rel;
}

// The five-dialogue fixture with its coreference annotations attached.
inline std::vector<Dialogue> fixture5() {
  const auto inventory = SlotInventory::multiwoz();
  auto dialogues = load_multiwoz(data_path("fixture5"), SplitSpec{}, inventory);
  return attach_coref_annotations(std::move(dialogues), data_path("fixture5/coref.json"), inventory);
}

inline std::vector<Dialogue> fixture3() {
  const auto inventory = SlotInventory::multiwoz();
  auto dialogues = load_multiwoz(data_path("fixture3"), SplitSpec{}, inventory);
  return attach_coref_annotations(std::move(dialogues), data_path("fixture3/coref.json"), inventory);
}

inline const Dialogue& by_id(const std::vector<Dialogue>& dialogues, const std::string& id) {
  for (const auto& d : dialogues) {
    if (d.dialogue_id == id) return d;
  }
  throw std::out_of_range("no dialogue " + id);
}

inline TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder_choice = "tiny";
  c.max_seq_length = 256;
  c.seed = 7;
  return c;
}

// A tiny-encoder model whose vocabulary covers `dialogues`.
inline std::unique_ptr<CdstModel> tiny_model(const std::vector<Dialogue>& dialogues,
                                             const TrainConfig& config = tiny_config()) {
  return make_model(config, SlotInventory::multiwoz(), dialogues);
}

// Random matrix with N(0, stddev) entries.
inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

}  // namespace cdst::testing

#endif  // CDST_TESTS_FIXTURES_H_
