#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luq/graph.hpp"
#include "luq/rng.hpp"
#include "luq/tape.hpp"
#include "luq/tensor.hpp"

namespace luq {

enum class Variant { plain, skip };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::plain;
  int latent_dim = 32;
  int image_height = 64;
  int image_width = 64;
  int kernel = 3;
  // One stride-2 conv + relu stage per entry.
  std::vector<int> encoder_widths{8, 16, 32, 64};
  // F0 (per-node features after the initial affine map), hidden graph
  // layers, then 2 output coordinates.
  std::vector<int> decoder_widths{64, 48, 32, 2};
  // 1-based encoder stage whose output map is sampled by the skip decoder.
  int skip_level = 2;
  // Hidden graph layer after which the skip decoder reads out coordinates.
  int skip_after = 2;
  std::vector<StructureSpec> topology = default_structures();
  std::uint64_t init_seed = 1;

  int node_count() const;
  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Unknown keys are rejected; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named parameters in a fixed order.
class Weights {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& operator[](const std::string& name) const;
  Tensor& operator[](const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return names_.size(); }
  std::size_t parameter_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.
Weights init_weights(const ModelConfig& cfg);

// Weights recorded on one tape, either as trainable variables or constants.
struct BoundWeights {
  std::map<std::string, Var> vars;
  std::vector<Var> ordered;
  Var operator[](const std::string& name) const;
};

BoundWeights bind(Tape& tape, const Weights& w, bool trainable);

struct Encoded {
  Var mu;                     // [N x L]
  Var logvar;                 // [N x L], clamped to [-10, 10]
  std::vector<Var> features;  // per stage, [N x C x H x W]
};

inline constexpr float kLogvarMin = -10.0f;
inline constexpr float kLogvarMax = 10.0f;

// images [N x 1 x H x W] (or [1 x H x W]).
Encoded encode(Tape& t, const BoundWeights& w, const ModelConfig& cfg, Var images);
// z = mu + exp(logvar / 2) * eps.
Var reparameterize(Tape& t, Var mu, Var logvar, Var eps);
// Standard normal draws [N x L] taken row-major from rng.
Tensor draw_eps(int n, int latent_dim, Rng& rng);

// z [N x L] -> [N x M x 2].
Var decode_plain(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z);

struct SkipDecoded {
  Var coords;        // final [N x M x 2]
  Var intermediate;  // readout the feature map is sampled at, [N x M x 2]
};

// fmap [N|1 x C x h x w] from the configured encoder stage.
SkipDecoded decode_skip(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z,
                        Var fmap);

// Variant dispatch; intermediate is invalid for the plain decoder.
SkipDecoded decode(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z,
                   const Encoded& enc);

struct LatentDistribution {
  Tensor mu;      // [L]
  Tensor logvar;  // [L], clamped

  Tensor sigma() const;
};

struct PredictionEnsemble {
  int n = 0;
  Tensor samples;      // [n x M x 2]
  Tensor node_mean;    // [M x 2]
  Tensor node_std_xy;  // [M x 2], population std
};

// Mean and population std over the leading axis; n >= 2.
PredictionEnsemble make_ensemble(Tensor samples);

inline constexpr int kDefaultPredictionSamples = 50;

// One encode, n reparameterized draws decoded as one batch.
struct Prediction {
  LatentDistribution latent;
  PredictionEnsemble ensemble;
};

Prediction sample_predictions(const Tensor& image, const Weights& w, const ModelConfig& cfg,
                              const NormalizedAdjacency& adj, int n, Rng& rng);

// Deterministic pass decoding mu; images [N x 1 x H x W] -> [N x M x 2].
Tensor predict_mean(const Tensor& images, const Weights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj);

// Stacks [1 x H x W] images into [N x 1 x H x W].
Tensor stack_images(const std::vector<const Tensor*>& images);

struct Checkpoint {
  ModelConfig config;
  Weights weights;
  std::uint64_t seed = 0;
  long step = 0;
};

// dir/weights.bin (little-endian f32, manifest order) + dir/weights.json.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
// Accepts the directory or the weights.json path.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace luq
