#pragma once

// run.json: everything needed to replay one CLI invocation.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace samtta {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::vector<std::pair<std::string, std::string>> config;  // resolved, post-override
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;
  double wall_clock_seconds = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> warnings;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  void write(const std::filesystem::path& path) const;
};

}  // namespace samtta
