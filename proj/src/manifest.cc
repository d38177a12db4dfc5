#include "cdst/manifest.h"

#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "cdst/text.h"

namespace cdst {

std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a64(config.dump())); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = {{"command", command},   {"config", config},         {"config_hash", hash()},
                      {"inputs", inputs},     {"outputs", outputs},       {"seed", seed},
                      {"tool_version", tool_version}};
  if (started_at) j["started_at"] = *started_at;
  if (finished_at) j["finished_at"] = *finished_at;
  return j;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump(2) << '\n';
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cdst
