#include "luq/corrupt.hpp"

#include <algorithm>
#include <cmath>

#include "luq/anomaly.hpp"
#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "luq/uncertainty.hpp"

namespace luq {

namespace {

void check_image(const Tensor& image) {
  if (image.shape().rank() != 3 || image.shape()[0] != 1) throw ShapeError("image must be [1 x H x W]");
}

std::optional<double> safe_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return spearman(x, y);
  } catch (const ContractError&) {
    return std::nullopt;
  }
}

}  // namespace

Tensor occlude(const Tensor& image, const OcclusionSpec& spec) {
  check_image(image);
  const int h = image.shape()[1], w = image.shape()[2];
  if (spec.side < 0 || spec.row < 0 || spec.col < 0 || spec.row + spec.side > h || spec.col + spec.side > w)
    throw ConfigError("occlusion square leaves the " + std::to_string(h) + "x" + std::to_string(w) + " image");
  Tensor out = image;
  for (int r = spec.row; r < spec.row + spec.side; ++r)
    for (int c = spec.col; c < spec.col + spec.side; ++c) out[static_cast<std::size_t>(r) * w + c] = spec.fill;
  return out;
}

Tensor add_noise(const Tensor& image, double sigma, std::uint64_t seed) {
  check_image(image);
  if (!(sigma >= 0)) throw ConfigError("noise sigma must be >= 0");
  Tensor out = image;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& v : out.data())
    v = static_cast<float>(std::clamp(static_cast<double>(v) + sigma * static_cast<double>(rng.normal()), 0.0, 1.0));
  return out;
}

std::vector<OcclusionSpec> quadrant_grid(int height, int width, int side) {
  const int hh = height / 2, hw = width / 2;
  if (side > hh || side > hw) throw ConfigError("occlusion side larger than a quadrant");
  const int r0 = (hh - side) / 2, c0 = (hw - side) / 2;
  return {{side, r0, c0, 0.0f, "top_left"},
          {side, r0, hw + c0, 0.0f, "top_right"},
          {side, hh + r0, c0, 0.0f, "bottom_left"},
          {side, hh + r0, hw + c0, 0.0f, "bottom_right"}};
}

bool node_inside(const OcclusionSpec& spec, double x, double y, int height, int width) {
  const double px = x * (width - 1), py = y * (height - 1);
  return px >= spec.col - 0.5 && px < spec.col + spec.side - 0.5 && py >= spec.row - 0.5 &&
         py < spec.row + spec.side - 0.5;
}

OcclusionReport occlusion_experiment(const std::vector<Sample>& samples, const EvalModel& model, int n_samples,
                                     const std::vector<OcclusionSpec>& grid, std::uint64_t seed) {
  OcclusionReport rep;
  const int h = model.config.image_height, w = model.config.image_width;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    for (std::size_t g = 0; g < grid.size(); ++g) {
      Rng rng(derive_seed(seed, i, g));
      const Prediction p =
          sample_predictions(occlude(s.image, grid[g]), model.weights, model.config, model.adj, n_samples, rng);
      const auto stds = nodewise_uncertainty(p.ensemble);
      for (std::size_t j = 0; j < stds.size(); ++j) {
        const int node = static_cast<int>(j);
        const bool in = node_inside(grid[g], s.landmarks.at(node, 0), s.landmarks.at(node, 1), h, w);
        rep.rows.push_back({s.id, grid[g].name, in, node, stds[j]});
        (in ? rep.inside : rep.outside).push_back(stds[j]);
      }
    }
  }
  if (!rep.inside.empty()) rep.median_inside = median(rep.inside);
  if (!rep.outside.empty()) rep.median_outside = median(rep.outside);
  if (!rep.inside.empty() && !rep.outside.empty()) rep.separability_auc = roc_auc(rep.inside, rep.outside);
  return rep;
}

NoiseSweep noise_sweep(const std::vector<Sample>& samples, const EvalModel& model, const std::vector<double>& levels,
                       int n_samples, std::uint64_t seed) {
  if (levels.empty()) throw ConfigError("noise ladder is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] >= 0)) throw ConfigError("noise levels must be non-negative");
    if (i > 0 && !(levels[i] > levels[i - 1])) throw ConfigError("noise levels must be strictly increasing");
  }
  if (samples.empty()) throw DataError("noise sweep needs at least one image");
  NoiseSweep out;
  out.levels = levels;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    double lat = 0.0, pred = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      // The sampling stream depends on the image only, so level 0 reproduces the clean evaluation.
      Rng rng(derive_seed(seed, i));
      const Tensor img = add_noise(samples[i].image, levels[l], derive_seed(seed, i, 1 + l));
      const Prediction p = sample_predictions(img, model.weights, model.config, model.adj, n_samples, rng);
      lat += latent_uncertainty(p.latent);
      pred += predictive_score(nodewise_uncertainty(p.ensemble));
    }
    out.latent_unc_mean.push_back(lat / static_cast<double>(samples.size()));
    out.pred_score_mean.push_back(pred / static_cast<double>(samples.size()));
  }
  std::vector<double> idx(levels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
  if (levels.size() >= 3) {
    out.spearman_latent = safe_spearman(idx, out.latent_unc_mean);
    out.spearman_pred = safe_spearman(idx, out.pred_score_mean);
  }
  return out;
}

std::string occlusion_csv(const OcclusionReport& r) {
  std::string out = "image_id,placement,group,node_index,node_std\n";
  for (const auto& row : r.rows)
    out += row.image_id + "," + row.placement + "," + (row.inside ? "inside" : "outside") + "," +
           std::to_string(row.node_index) + "," + format_double(row.node_std) + "\n";
  return out;
}

std::string noise_sweep_csv(const NoiseSweep& s) {
  std::string out = "level,sigma_noise,latent_unc_mean,pred_score_mean\n";
  for (std::size_t i = 0; i < s.levels.size(); ++i)
    out += std::to_string(i) + "," + format_double(s.levels[i]) + "," + format_double(s.latent_unc_mean[i]) + "," +
           format_double(s.pred_score_mean[i]) + "\n";
  return out;
}

}  // namespace luq
