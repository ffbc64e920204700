#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luq/model.hpp"
#include "luq/synthdata.hpp"

namespace luq {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double kl_start = 1e-5;
  double kl_end = 1e-2;
  double kl_warmup_fraction = 0.5;
  // Multiplies masked_mse in the objective; coordinates are in [0,1], so
  // without it the KL term dominates and the posterior collapses to the prior.
  double recon_weight = 1024.0;
  // Relative weight of the skip decoder's intermediate readout loss.
  double readout_weight = 1.0;
  // Stop after this many steps (0: epochs * steps per epoch).
  long max_steps = 0;
  int log_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Mean squared error over masked-in nodes and both coordinates.
// pred/target [M x 2] or [N x M x 2]; mask has one entry per node.
double masked_mse(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask);
// Recorded version; mask is [N x M x 2] of 0/1 (each node's flag repeated).
Var masked_mse(Tape& t, Var pred, const Tensor& target, const Tensor& mask);

// 0.5 * sum_d (mu^2 + sigma^2 - log sigma^2 - 1).
double kl_divergence(const LatentDistribution& d);
// Per-sample KL summed over dims, averaged over the batch.
Var kl_divergence(Tape& t, Var mu, Var logvar);

// Log-linear from kl_start to kl_end over the warmup, constant after.
double kl_weight(long step, long total_steps, const TrainConfig& cfg);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long t = 0;
};

AdamState adam_init(const Weights& w);
// Throws NumericError naming the first parameter with a non-finite gradient.
void adam_step(Weights& w, const std::vector<Tensor>& grads, AdamState& state, const TrainConfig& cfg);

// Mean Euclidean landmark error in pixels; pred/target [N x M x 2].
double mean_landmark_error_px(const Tensor& pred, const Tensor& target, int height, int width);

struct TrainResult {
  Checkpoint best;
  Checkpoint final;
  double best_val_error_px = 0.0;
  long steps = 0;
  std::string metrics_csv;
};

using ProgressFn = std::function<void(const std::string&)>;

// When out_dir is non-empty: out_dir/weights.{bin,json} holds the best
// validation checkpoint, out_dir/final/ the last one, out_dir/metrics.csv the
// log. A numeric failure writes out_dir/last_good/ and rethrows.
TrainResult train_loop(const std::vector<Sample>& train, const std::vector<Sample>& val, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                       const ProgressFn& progress = {});

}  // namespace luq
