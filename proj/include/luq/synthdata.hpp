#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "luq/graph.hpp"
#include "luq/tensor.hpp"

namespace luq {

// Landmark coordinates, [M x 2], x rightward and y downward in [0,1].
using LandmarkSet = Tensor;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Polygon = std::vector<Point>;

// Sampling ranges for one anatomical structure. Every parameter is drawn
// uniformly from its [lo, hi] interval.
struct StructurePrior {
  StructureSpec spec;
  std::array<double, 2> cx{0.5, 0.5};
  std::array<double, 2> cy{0.5, 0.5};
  std::array<double, 2> a{0.1, 0.1};
  std::array<double, 2> b{0.1, 0.1};
  std::array<double, 2> theta{0.0, 0.0};
  // Fourier coefficient amplitude as a fraction of min(a, b); capped at 0.15.
  double perturbation = 0.06;
  double intensity = 0.5;
};

struct SynthConfig {
  int height = 64;
  int width = 64;
  double background = 0.7;
  double intensity_jitter = 0.05;
  double pixel_noise = 0.02;
  std::vector<StructurePrior> structures;

  std::vector<StructureSpec> topology_spec() const;
};

// Lungs dark (0.25) either side of a brighter heart (0.55) on 0.7 background.
SynthConfig default_synth_config();

inline constexpr int kFirstHarmonic = 2;
inline constexpr int kHarmonics = 4;  // k = 2..5
inline constexpr double kMaxPerturbation = 0.15;
inline constexpr double kFrameMargin = 0.02;
inline constexpr const char* kGeneratorVersion = "luq-synth/1";

struct ContourParams {
  double cx = 0.5;
  double cy = 0.5;
  double a = 0.1;
  double b = 0.1;
  double theta = 0.0;
  std::array<double, kHarmonics> alpha{};
  std::array<double, kHarmonics> beta{};
  double intensity = 0.5;
};

struct ShapeParams {
  std::vector<ContourParams> structures;
};

enum class OodLabel { in_distribution, ood_blank, ood_noise, ood_offcanvas, ood_wrongshape };

std::string to_string(OodLabel label);
OodLabel parse_ood_label(const std::string& s);
inline constexpr std::array<OodLabel, 4> kOodCategories{OodLabel::ood_blank, OodLabel::ood_noise,
                                                        OodLabel::ood_offcanvas, OodLabel::ood_wrongshape};

struct Sample {
  std::string id;
  std::uint64_t seed = 0;
  Tensor image;          // [1 x H x W] in [0,1]
  LandmarkSet landmarks; // [M x 2]
  std::vector<std::uint8_t> annotated;
  OodLabel label = OodLabel::in_distribution;
};

// Point on the perturbed ellipse at curve parameter t.
Point contour_point(const ContourParams& c, double t);
// node_count points at t_i = 2*pi*i / node_count.
Polygon contour_polygon(const ContourParams& c, int node_count);
LandmarkSet contour_landmarks(const ShapeParams& params, const std::vector<StructureSpec>& structures);

// Draws until every contour is simple and inside the frame margin.
// Throws DataError after 100 rejected attempts.
ShapeParams sample_shape(std::uint64_t seed, const SynthConfig& cfg);
bool shape_is_valid(const ShapeParams& params, const SynthConfig& cfg);
bool polygon_is_simple(const Polygon& poly);

// Even-odd fill of pixel centres; pixel (row, col) sits at (col/(W-1), row/(H-1)).
std::vector<std::uint8_t> rasterize(const Polygon& poly, int height, int width);

struct FilledPolygon {
  Polygon outline;
  double intensity = 0.0;
};

// Painter's-order fill, two 3x3 box blurs, Gaussian pixel noise, clamp.
Tensor render_polygons(const std::vector<FilledPolygon>& polys, const SynthConfig& cfg, std::uint64_t seed);
Tensor render(const ShapeParams& params, const SynthConfig& cfg, std::uint64_t seed);

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

Sample make_sample(const std::string& id, std::uint64_t seed, const SynthConfig& cfg);
Dataset make_dataset(int n_train, int n_val, int n_test, std::uint64_t master_seed, const SynthConfig& cfg);
// Star polygons (5-7 points) replacing each smooth contour of a wrongshape sample.
std::vector<Polygon> wrongshape_outlines(const ShapeParams& params, std::uint64_t seed);
Sample make_ood_sample(OodLabel label, const std::string& id, std::uint64_t seed, const SynthConfig& cfg);
std::vector<Sample> make_ood_set(int n_per_category, std::uint64_t master_seed, const SynthConfig& cfg);

// Number of turning-direction sign changes walking once around the polygon.
int curvature_sign_changes(const Polygon& poly);

}  // namespace luq
