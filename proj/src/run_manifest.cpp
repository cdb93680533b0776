#include "samtta/run_manifest.hpp"

#include <fstream>

#include "json.hpp"
#include "samtta/error.hpp"

namespace samtta {

namespace {

using Json = nlohmann::ordered_json;
using Pairs = std::vector<std::pair<std::string, std::string>>;

Json pairs_json(const Pairs& pairs) {
  Json j = Json::object();
  for (const auto& [k, v] : pairs) j[k] = v;
  return j;
}

Pairs json_pairs(const Json& j) {
  Pairs out;
  for (auto it = j.begin(); it != j.end(); ++it) out.emplace_back(it.key(), it.value().get<std::string>());
  return out;
}

}  // namespace

std::string RunManifest::to_json() const {
  Json j;
  j["subcommand"] = subcommand;
  j["argv"] = argv;
  j["config"] = pairs_json(config);
  j["seed"] = seed;
  j["versions"] = {{"samtta", kVersion}, {"compiler", __VERSION__}, {"cxx_standard", __cplusplus}};
  j["inputs"] = pairs_json(inputs);
  j["outputs"] = pairs_json(outputs);
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["status"] = ok ? "ok" : "error";
  if (!error.empty()) j["error"] = error;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const Json j = Json::parse(text);
    m.subcommand = j.at("subcommand").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = json_pairs(j.at("config"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = json_pairs(j.at("inputs"));
    m.outputs = json_pairs(j.at("outputs"));
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    m.ok = j.at("status").get<std::string>() == "ok";
    if (j.contains("error")) m.error = j["error"].get<std::string>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run manifest: ") + e.what());
  }
  return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write run manifest '" + path.string() + "'");
  out << to_json();
}

}  // namespace samtta
