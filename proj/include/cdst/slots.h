#ifndef CDST_SLOTS_H_
#define CDST_SLOTS_H_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cdst {

// One tracked attribute, e.g. {"hotel", "book day", "hotel book day"}.
struct DomainSlot {
  std::string domain;
  std::string slot;
  // Text fed to the encoder in the slot segment.
  std::string surface_form;

  // Canonical "domain-slot" name, e.g. "hotel-book day".
  std::string name() const { return domain + "-" + slot; }

  friend bool operator==(const DomainSlot&, const DomainSlot&) = default;
};

// The fixed, ordered set of domain-slot pairs. Head count and belief-state
// keys follow this order; it never changes after load.
class SlotInventory {
 public:
  SlotInventory() = default;
  explicit SlotInventory(std::vector<DomainSlot> slots);

  // Reads the ontology file ({"slots": [{"domain", "slot", "surface_form"}]}).
  static SlotInventory load(const std::string& path);
  // The 30 canonical MultiWOZ 2.1 slots over five domains, as checked in
  // under data/slots.json.
  static SlotInventory multiwoz();

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  const DomainSlot& at(std::size_t i) const { return slots_.at(i); }
  const std::vector<DomainSlot>& slots() const { return slots_; }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }

  std::optional<std::size_t> index_of(std::string_view name) const;
  // Throws std::invalid_argument when the slot is not part of the inventory.
  std::size_t require(std::string_view name) const;
  bool contains(std::string_view name) const { return index_of(name).has_value(); }
  std::vector<std::string> domains() const;

  nlohmann::json to_json() const;
  static SlotInventory from_json(const nlohmann::json& j);

  friend bool operator==(const SlotInventory& a, const SlotInventory& b) {
    return a.slots_ == b.slots_;
  }

 private:
  std::vector<DomainSlot> slots_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace cdst

#endif  // CDST_SLOTS_H_
