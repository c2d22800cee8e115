#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "depthcontrast/dataset.hpp"
#include "depthcontrast/model.hpp"
#include "depthcontrast/pipeline.hpp"

namespace dc {

enum class Precision { float32, float64 };

/// Everything a CLI run needs. Files are JSON objects with the optional
/// sections below; a "preset" key picks the base values that the remaining
/// keys then override.
///
///   {
///     "preset": "desk" | "paper-faithful",
///     "seed": 0,
///     "precision": "float32" | "float64",
///     "model": {"encoder": {...}, "projector": {...}, "classifier": {...}},
///     "pretrain": {"learning_rate", "batch_size", "epochs", "crop_size", "tau"},
///     "downstream": {"learning_rate", "batch_size", "epochs", "crop_size", "dropout_rate"},
///     "generator": {"scale", "image_size", "seed"},
///     "protocol": {"name", "runs", "semi"}
///   }
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  Precision precision = Precision::float64;  // float32 roughly halves training time
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::desk(TrainMode::pretrain);
  TrainConfig downstream = TrainConfig::desk(TrainMode::finetune);
  GeneratorConfig generator;
  std::uint64_t generator_seed = 0;
  std::string protocol = "FT-full";
  int runs = 5;
  bool semi = false;

  void validate() const;
  static RunConfig from_preset(std::string_view name);
};

inline constexpr std::array<std::string_view, 2> kPresetNames = {"desk", "paper-faithful"};

nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Parses a config document. Errors are ConfigError with "source:line:" in
/// front when the offending key can be located.
RunConfig parse_run_config(std::string_view text, const std::string& source = "config");

/// A preset name or the path of a config file.
RunConfig load_run_config(const std::string& name_or_path);

std::string_view precision_name(Precision p);

}  // namespace dc
