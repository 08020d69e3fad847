#pragma once

// Difficulty splits and run configuration.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "viewbench/binning.hpp"
#include "viewbench/error.hpp"
#include "viewbench/featstore.hpp"
#include "viewbench/membank.hpp"
#include "viewbench/segmenter.hpp"

namespace viewbench {

struct DifficultySpec {
  std::string name;
  std::vector<double> reference_bins;
  std::vector<double> validation_bins;

  std::set<double> reference_set() const { return {reference_bins.begin(), reference_bins.end()}; }
  bool is_reference(double bin) const {
    return std::find(reference_bins.begin(), reference_bins.end(), bin) != reference_bins.end();
  }
};

/// The four splits, easiest first. Fewer reference bins means larger unseen
/// angular gaps.
inline const std::vector<DifficultySpec>& standard_difficulties() {
  static const std::vector<DifficultySpec> specs = {
      {"Easy", {0, 30, 60, 90}, {15, 45, 75}},
      {"Medium", {0, 45, 90}, {15, 30, 60, 75}},
      {"Hard", {0, 90}, {15, 30, 45, 60, 75}},
      {"Extreme", {0}, {15, 30, 45, 60, 75, 90}},
  };
  return specs;
}

inline const DifficultySpec& difficulty_by_name(const std::string& name) {
  for (const auto& d : standard_difficulties()) {
    if (d.name == name) return d;
  }
  throw DomainError("unknown difficulty '" + name + "' (expected Easy, Medium, Hard or Extreme)");
}

inline std::vector<std::string> difficulty_names() {
  std::vector<std::string> out;
  for (const auto& d : standard_difficulties()) out.push_back(d.name);
  return out;
}

namespace detail {
inline std::string join_bins(const std::vector<double>& bins) {
  std::string s;
  for (std::size_t i = 0; i < bins.size(); ++i) s += (i ? ";" : "") + format_degrees(bins[i]);
  return s;
}
}  // namespace detail

/// `difficulty,reference_bins,validation_bins` with `;`-joined angles.
inline std::string difficulties_csv(const std::vector<DifficultySpec>& specs = standard_difficulties()) {
  std::string out = "difficulty,reference_bins,validation_bins\n";
  for (const auto& d : specs) {
    out += d.name + "," + detail::join_bins(d.reference_bins) + "," + detail::join_bins(d.validation_bins) + "\n";
  }
  return out;
}

struct ModelFeatures {
  std::string name;
  std::filesystem::path feature_root;
};

inline constexpr const char* kOutputRootEnv = "VIEWBENCH_OUTPUT_ROOT";

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<ModelFeatures> models;  // sorted by name
  std::size_t capacity = 1024000;
  std::vector<std::size_t> capacities = {320000, 640000, 1024000};
  std::size_t k = kDefaultK;
  double temperature = kDefaultTemperature;
  std::uint64_t seed = kDefaultSeed;
  std::vector<std::string> difficulties = difficulty_names();
  std::filesystem::path output_root = "viewbench-out";
  std::size_t shards = 1;
  std::size_t chunk_size = 4;
  unsigned threads = 0;  // 0: hardware concurrency
  SamplingPolicy sampling = SamplingPolicy::Uniform;
  Interpolation interpolation = Interpolation::Bilinear;
  bool write_predictions = true;
  bool dump_distributions = false;

  unsigned worker_threads() const { return threads ? threads : default_threads(); }

  void validate() const {
    if (models.empty()) throw DomainError("no models configured");
    if (capacity == 0) throw DomainError("capacity must be positive");
    if (k == 0) throw DomainError("k must be positive");
    if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
    if (shards == 0) throw DomainError("shard count must be positive");
    if (chunk_size == 0) throw DomainError("chunk size must be positive");
    for (const auto& d : difficulties) difficulty_by_name(d);
  }
};

inline SamplingPolicy parse_sampling(const std::string& s) {
  if (s == "uniform") return SamplingPolicy::Uniform;
  if (s == "class-balanced") return SamplingPolicy::ClassBalanced;
  throw DomainError("unknown sampling policy '" + s + "' (uniform | class-balanced)");
}

inline Interpolation parse_interpolation(const std::string& s) {
  if (s == "bilinear") return Interpolation::Bilinear;
  if (s == "nearest") return Interpolation::Nearest;
  throw DomainError("unknown interpolation '" + s + "' (bilinear | nearest)");
}

/// Reads a JSON config. Relative paths resolve against `base_dir`.
///
/// {
///   "manifest": "subset/manifest.json",
///   "models": {"DINO": "features/dino"},
///   "output_root": "out",
///   "memory": {"capacity": 1024000, "capacities": [...], "seed": 42,
///              "shards": 1, "sampling": "uniform"},
///   "retrieval": {"k": 30, "temperature": 0.02, "interpolation": "bilinear"},
///   "evaluation": {"difficulties": ["Easy", ...], "chunk_size": 4,
///                  "threads": 0, "write_predictions": true,
///                  "dump_distributions": false}
/// }
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? (base_dir / path).lexically_normal() : path;
  };
  try {
    if (j.contains("manifest")) c.manifest = resolve(j.at("manifest").get<std::string>());
    if (j.contains("models")) {
      for (const auto& [name, root] : j.at("models").items()) c.models.push_back({name, resolve(root.get<std::string>())});
    }
    if (j.contains("output_root")) c.output_root = resolve(j.at("output_root").get<std::string>());
    if (j.contains("memory")) {
      const auto& m = j.at("memory");
      c.capacity = m.value("capacity", c.capacity);
      c.capacities = m.value("capacities", c.capacities);
      c.seed = m.value("seed", c.seed);
      c.shards = m.value("shards", c.shards);
      if (m.contains("sampling")) c.sampling = parse_sampling(m.at("sampling").get<std::string>());
    }
    if (j.contains("retrieval")) {
      const auto& r = j.at("retrieval");
      c.k = r.value("k", c.k);
      c.temperature = r.value("temperature", c.temperature);
      if (r.contains("interpolation")) c.interpolation = parse_interpolation(r.at("interpolation").get<std::string>());
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      c.difficulties = e.value("difficulties", c.difficulties);
      c.chunk_size = e.value("chunk_size", c.chunk_size);
      c.threads = e.value("threads", c.threads);
      c.write_predictions = e.value("write_predictions", c.write_predictions);
      c.dump_distributions = e.value("dump_distributions", c.dump_distributions);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("invalid config: ") + e.what());
  }
  std::sort(c.models.begin(), c.models.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_all(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Applies the output-root environment override, if set.
inline void apply_environment(RunConfig& c) {
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) c.output_root = root;
}

}  // namespace viewbench
