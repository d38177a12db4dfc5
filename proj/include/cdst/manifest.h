#ifndef CDST_MANIFEST_H_
#define CDST_MANIFEST_H_

#include <map>
#include <optional>
#include <string>

#include "json.hpp"

namespace cdst {

inline constexpr const char* kToolVersion = "0.1.0";

// Hash of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& config);

// Written next to every CLI output so a result can be traced back to the
// invocation that produced it.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  // Left out in deterministic mode.
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  std::string hash() const { return config_hash(config); }
  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

// UTC, ISO 8601.
std::string utc_timestamp();

}  // namespace cdst

#endif  // CDST_MANIFEST_H_
