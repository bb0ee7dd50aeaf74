#pragma once

#include "scnn/pipeline.hpp"
#include "scnn/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scnn {

struct RunPaths {
  std::filesystem::path data_dir = "data";
  std::filesystem::path model_dir = "models";
  std::filesystem::path output_dir = "out";
};

struct EvalConfig {
  std::vector<double> thetas{0.1, 0.2, 0.3, 0.4, 0.5};
  bool interpolated = false;
  double histogram_theta = 0.5;
  std::size_t top_k = 0;  // 0 keeps every detection
};

// One document drives every command. `seed` seeds training and sampling;
// `synth.seed` pins the generated dataset.
struct RunConfig {
  RunPaths paths;
  std::uint64_t seed = 1;
  int jobs = 1;
  SynthConfig synth;
  PipelineConfig pipeline;
  EvalConfig eval;
  std::vector<double> ablation_alphas{0.25, 0.5, 1.0};

  // Copies `seed` into the pipeline and the three SGD stages.
  void propagate_seed();
  std::vector<std::string> violations() const;
  nlohmann::json to_json() const;
  // FNV-1a over the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
};

// Parses a config document, rejecting unknown keys. Collects every problem and
// throws one ConfigError listing all of them.
RunConfig parse_run_config(const nlohmann::json& doc);

// Applies `section.key=value` overrides (value parsed as JSON, else taken as a
// string) on top of the file, then parses.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// "key = default" lines for every accepted key.
std::string config_reference();

}  // namespace scnn
