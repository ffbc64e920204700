#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luq/corrupt.hpp"
#include "luq/model.hpp"
#include "luq/synthdata.hpp"
#include "luq/train.hpp"

namespace luq {

struct DataConfig {
  int n_train = 2000;
  int n_val = 200;
  int n_test = 200;
  int n_ood_per_category = 100;
  SynthConfig synth = default_synth_config();
};

struct CorruptionConfig {
  int n_images = 50;  // first images of the evaluated split
  int n_samples = kDefaultPredictionSamples;
  int occlusion_side = 16;
  std::vector<double> noise_levels = kDefaultNoiseLevels;
};

struct OodConfig {
  int n_samples = kDefaultPredictionSamples;
};

// Everything one run needs. model.topology, image size and train.seed are
// derived (from data.synth and seed) rather than read.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  int predict_samples = kDefaultPredictionSamples;
  CorruptionConfig corruption;
  OodConfig ood;

  // Re-derives the dependent fields; call after editing seed or data.synth.
  void sync();
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys keep defaults; unknown keys throw ConfigError naming the path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// flag > environment (LUQ_SEED) > config.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::uint64_t config_seed);

}  // namespace luq
