#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "luq/model.hpp"
#include "luq/synthdata.hpp"

namespace luq {

struct OcclusionSpec {
  int side = 16;
  int row = 0;  // top-left
  int col = 0;
  float fill = 0.0f;
  std::string name;
};

// Pixels inside the square set to fill; ConfigError when it leaves the image.
Tensor occlude(const Tensor& image, const OcclusionSpec& spec);
// Pixelwise Gaussian noise then clamp to [0,1]; a pure function of the seed.
Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed);

// One square centred in each image quadrant.
std::vector<OcclusionSpec> quadrant_grid(int height, int width, int side = 16);

// Node lies inside the square when its pixel position falls in the square's pixel cells.
bool node_inside(const OcclusionSpec& spec, double x, double y, int height, int width);

inline const std::vector<double> kDefaultNoiseLevels{0.0, 0.05, 0.1, 0.2, 0.4, 0.8};

struct EvalModel {
  const Weights& weights;
  const ModelConfig& config;
  const NormalizedAdjacency& adj;
};

struct OcclusionRow {
  std::string image_id;
  std::string placement;
  bool inside = false;
  int node_index = 0;
  double node_std = 0.0;
};

struct OcclusionReport {
  std::vector<OcclusionRow> rows;
  std::vector<double> inside;
  std::vector<double> outside;
  std::optional<double> median_inside;
  std::optional<double> median_outside;
  // P(random inside std > random outside std), ties 1/2.
  std::optional<double> separability_auc;
};

OcclusionReport occlusion_experiment(const std::vector<Sample>& samples, const EvalModel& model, int n_samples,
                                     const std::vector<OcclusionSpec>& grid, std::uint64_t seed);

struct NoiseSweep {
  std::vector<double> levels;
  std::vector<double> latent_unc_mean;
  std::vector<double> pred_score_mean;
  // Empty when a curve is constant (rank correlation undefined).
  std::optional<double> spearman_latent;
  std::optional<double> spearman_pred;
};

NoiseSweep noise_sweep(const std::vector<Sample>& samples, const EvalModel& model, const std::vector<double>& levels,
                       int n_samples, std::uint64_t seed);

std::string occlusion_csv(const OcclusionReport& r);
std::string noise_sweep_csv(const NoiseSweep& s);

}  // namespace luq
