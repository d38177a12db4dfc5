#include "cdst/slots.h"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace cdst {
namespace {

const char* const kMultiwozSlots[][3] = {
    {"attraction", "area", "attraction area"},
    {"attraction", "name", "attraction name"},
    {"attraction", "type", "attraction type"},
    {"hotel", "area", "hotel area"},
    {"hotel", "book day", "hotel book day"},
    {"hotel", "book people", "hotel book people"},
    {"hotel", "book stay", "hotel book stay"},
    {"hotel", "internet", "hotel internet"},
    {"hotel", "name", "hotel name"},
    {"hotel", "parking", "hotel parking"},
    {"hotel", "pricerange", "hotel price range"},
    {"hotel", "stars", "hotel stars"},
    {"hotel", "type", "hotel type"},
    {"restaurant", "area", "restaurant area"},
    {"restaurant", "book day", "restaurant book day"},
    {"restaurant", "book people", "restaurant book people"},
    {"restaurant", "book time", "restaurant book time"},
    {"restaurant", "food", "restaurant food"},
    {"restaurant", "name", "restaurant name"},
    {"restaurant", "pricerange", "restaurant price range"},
    {"taxi", "arriveby", "taxi arrive by"},
    {"taxi", "departure", "taxi departure"},
    {"taxi", "destination", "taxi destination"},
    {"taxi", "leaveat", "taxi leave at"},
    {"train", "arriveby", "train arrive by"},
    {"train", "book people", "train book people"},
    {"train", "day", "train day"},
    {"train", "departure", "train departure"},
    {"train", "destination", "train destination"},
    {"train", "leaveat", "train leave at"},
};

}  // namespace

SlotInventory::SlotInventory(std::vector<DomainSlot> slots)
    : slots_(std::move(slots)) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto [it, inserted] = index_.emplace(slots_[i].name(), i);
    if (!inserted) {
      throw std::invalid_argument("duplicate slot in inventory: " + it->first);
    }
  }
}

SlotInventory SlotInventory::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open slot ontology: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed slot ontology " + path + ": " + e.what());
  }
  return from_json(j);
}

SlotInventory SlotInventory::multiwoz() {
  std::vector<DomainSlot> slots;
  for (const auto& row : kMultiwozSlots) slots.push_back({row[0], row[1], row[2]});
  return SlotInventory(std::move(slots));
}

std::optional<std::size_t> SlotInventory::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t SlotInventory::require(std::string_view name) const {
  if (auto i = index_of(name)) return *i;
  throw std::invalid_argument("slot not in inventory: " + std::string(name));
}

std::vector<std::string> SlotInventory::domains() const {
  std::vector<std::string> out;
  for (const auto& s : slots_) {
    if (std::find(out.begin(), out.end(), s.domain) == out.end()) {
      out.push_back(s.domain);
    }
  }
  return out;
}

nlohmann::json SlotInventory::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : slots_) {
    arr.push_back({{"domain", s.domain}, {"slot", s.slot}, {"surface_form", s.surface_form}});
  }
  return {{"slots", arr}};
}

SlotInventory SlotInventory::from_json(const nlohmann::json& j) {
  std::vector<DomainSlot> slots;
  try {
    for (const auto& e : j.at("slots")) {
      DomainSlot s{e.at("domain").get<std::string>(), e.at("slot").get<std::string>(),
                   e.value("surface_form", std::string())};
      if (s.surface_form.empty()) s.surface_form = s.domain + " " + s.slot;
      slots.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed slot ontology: ") + e.what());
  }
  if (slots.empty()) throw std::runtime_error("slot ontology lists no slots");
  return SlotInventory(std::move(slots));
}

}  // namespace cdst
