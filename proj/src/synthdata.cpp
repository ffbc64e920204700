#include "luq/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "luq/errors.hpp"
#include "luq/rng.hpp"

namespace luq {

namespace {

constexpr int kMaxAttempts = 100;
constexpr int kDenseFactor = 4;

double draw(Rng& rng, const std::array<double, 2>& range) {
  return range[0] == range[1] ? range[0] : rng.uniform(range[0], range[1]);
}

bool segments_cross(Point p1, Point p2, Point q1, Point q2) {
  auto orient = [](Point a, Point b, Point c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); };
  const double d1 = orient(q1, q2, p1);
  const double d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1);
  const double d4 = orient(p1, p2, q2);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

Polygon dense_outline(const ContourParams& c, int node_count) {
  return contour_polygon(c, kDenseFactor * node_count);
}

std::vector<float> box_blur(const std::vector<float>& src, int h, int w) {
  std::vector<float> out(src.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float acc = 0.0f;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = std::clamp(r + dr, 0, h - 1);
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = std::clamp(c + dc, 0, w - 1);
          acc += src[static_cast<std::size_t>(rr * w + cc)];
        }
      }
      out[static_cast<std::size_t>(r * w + c)] = acc / 9.0f;
    }
  }
  return out;
}

Polygon resample_closed(const Polygon& poly, int count) {
  std::vector<double> cum(poly.size() + 1, 0.0);
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point a = poly[i];
    const Point b = poly[(i + 1) % poly.size()];
    cum[i + 1] = cum[i] + std::hypot(b.x - a.x, b.y - a.y);
  }
  Polygon out;
  out.reserve(static_cast<std::size_t>(count));
  std::size_t seg = 0;
  for (int k = 0; k < count; ++k) {
    const double s = cum.back() * k / count;
    while (seg + 1 < poly.size() && cum[seg + 1] <= s) ++seg;
    const Point a = poly[seg];
    const Point b = poly[(seg + 1) % poly.size()];
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

LandmarkSet landmarks_from(const std::vector<Polygon>& contours) {
  int m = 0;
  for (const auto& p : contours) m += static_cast<int>(p.size());
  LandmarkSet x(Shape{m, 2});
  int row = 0;
  for (const auto& p : contours) {
    for (const auto& pt : p) {
      x.at(row, 0) = static_cast<float>(pt.x);
      x.at(row, 1) = static_cast<float>(pt.y);
      ++row;
    }
  }
  return x;
}

std::vector<FilledPolygon> filled(const ShapeParams& params, const SynthConfig& cfg) {
  std::vector<FilledPolygon> polys;
  for (std::size_t s = 0; s < params.structures.size(); ++s)
    polys.push_back({dense_outline(params.structures[s], cfg.structures[s].spec.node_count),
                     params.structures[s].intensity});
  return polys;
}

}  // namespace

std::vector<StructureSpec> SynthConfig::topology_spec() const {
  std::vector<StructureSpec> out;
  for (const auto& s : structures) out.push_back(s.spec);
  return out;
}

SynthConfig default_synth_config() {
  SynthConfig cfg;
  StructurePrior right;
  right.spec = {"right_lung", 24, true};
  right.cx = {0.24, 0.36};
  right.cy = {0.42, 0.56};
  right.a = {0.11, 0.16};
  right.b = {0.24, 0.33};
  right.theta = {-0.2, 0.2};
  right.intensity = 0.25;
  StructurePrior left = right;
  left.spec = {"left_lung", 24, true};
  left.cx = {0.64, 0.76};
  StructurePrior heart;
  heart.spec = {"heart", 16, true};
  heart.cx = {0.50, 0.62};
  heart.cy = {0.58, 0.70};
  heart.a = {0.11, 0.17};
  heart.b = {0.08, 0.13};
  heart.theta = {-0.4, -0.1};
  heart.intensity = 0.55;
  cfg.structures = {right, left, heart};
  return cfg;
}

std::string to_string(OodLabel label) {
  switch (label) {
    case OodLabel::in_distribution: return "in_distribution";
    case OodLabel::ood_blank: return "ood_blank";
    case OodLabel::ood_noise: return "ood_noise";
    case OodLabel::ood_offcanvas: return "ood_offcanvas";
    case OodLabel::ood_wrongshape: return "ood_wrongshape";
  }
  return "unknown";
}

OodLabel parse_ood_label(const std::string& s) {
  for (auto l : {OodLabel::in_distribution, OodLabel::ood_blank, OodLabel::ood_noise, OodLabel::ood_offcanvas,
                 OodLabel::ood_wrongshape})
    if (to_string(l) == s) return l;
  throw DataError("unknown ood_label '" + s + "'");
}

Point contour_point(const ContourParams& c, double t) {
  const double ct = std::cos(t);
  const double st = std::sin(t);
  double x = c.a * ct;
  double y = c.b * st;
  const double nx = c.b * ct;
  const double ny = c.a * st;
  const double nn = std::hypot(nx, ny);
  double r = 0.0;
  for (int k = 0; k < kHarmonics; ++k) {
    const double kt = (k + kFirstHarmonic) * t;
    r += c.alpha[static_cast<std::size_t>(k)] * std::cos(kt) + c.beta[static_cast<std::size_t>(k)] * std::sin(kt);
  }
  x += r * nx / nn;
  y += r * ny / nn;
  const double cr = std::cos(c.theta);
  const double sr = std::sin(c.theta);
  return {c.cx + x * cr - y * sr, c.cy + x * sr + y * cr};
}

Polygon contour_polygon(const ContourParams& c, int node_count) {
  if (node_count < 3) throw ConfigError("contour needs at least 3 nodes");
  Polygon p;
  p.reserve(static_cast<std::size_t>(node_count));
  for (int i = 0; i < node_count; ++i) p.push_back(contour_point(c, 2.0 * std::numbers::pi * i / node_count));
  return p;
}

LandmarkSet contour_landmarks(const ShapeParams& params, const std::vector<StructureSpec>& structures) {
  if (params.structures.size() != structures.size()) throw ShapeError("shape/topology structure count mismatch");
  std::vector<Polygon> contours;
  for (std::size_t s = 0; s < structures.size(); ++s)
    contours.push_back(contour_polygon(params.structures[s], structures[s].node_count));
  return landmarks_from(contours);
}

bool polygon_is_simple(const Polygon& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // adjacent through the wrap
      if (segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

bool shape_is_valid(const ShapeParams& params, const SynthConfig& cfg) {
  for (std::size_t s = 0; s < params.structures.size(); ++s) {
    const Polygon outline = dense_outline(params.structures[s], cfg.structures[s].spec.node_count);
    for (const auto& p : outline)
      if (p.x < kFrameMargin || p.x > 1.0 - kFrameMargin || p.y < kFrameMargin || p.y > 1.0 - kFrameMargin)
        return false;
    if (!polygon_is_simple(outline)) return false;
  }
  return true;
}

ShapeParams sample_shape(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    ShapeParams params;
    for (const auto& prior : cfg.structures) {
      ContourParams c;
      c.cx = draw(rng, prior.cx);
      c.cy = draw(rng, prior.cy);
      c.a = draw(rng, prior.a);
      c.b = draw(rng, prior.b);
      c.theta = draw(rng, prior.theta);
      const double amp = std::min(prior.perturbation, kMaxPerturbation) * std::min(c.a, c.b);
      for (int k = 0; k < kHarmonics; ++k) {
        c.alpha[static_cast<std::size_t>(k)] = amp > 0 ? rng.uniform(-amp, amp) : 0.0;
        c.beta[static_cast<std::size_t>(k)] = amp > 0 ? rng.uniform(-amp, amp) : 0.0;
      }
      c.intensity = prior.intensity + (cfg.intensity_jitter > 0
                                           ? rng.uniform(-cfg.intensity_jitter, cfg.intensity_jitter)
                                           : 0.0);
      params.structures.push_back(c);
    }
    if (shape_is_valid(params, cfg)) return params;
  }
  throw DataError("shape sampling exceeded " + std::to_string(kMaxAttempts) + " attempts");
}

std::vector<std::uint8_t> rasterize(const Polygon& poly, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
  const std::size_t n = poly.size();
  std::vector<double> xs;
  for (int r = 0; r < height; ++r) {
    const double y = static_cast<double>(r) / (height - 1);
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point a = poly[i];
      const Point b = poly[(i + 1) % n];
      // Half-open rule so a vertex on the scanline is counted once.
      if ((a.y <= y && b.y > y) || (b.y <= y && a.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] * (width - 1))));
      const int c1 = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] * (width - 1))));
      for (int c = c0; c <= c1; ++c) mask[static_cast<std::size_t>(r * width + c)] = 1;
    }
  }
  return mask;
}

Tensor render_polygons(const std::vector<FilledPolygon>& polys, const SynthConfig& cfg, std::uint64_t seed) {
  const int h = cfg.height;
  const int w = cfg.width;
  std::vector<float> img(static_cast<std::size_t>(h * w), static_cast<float>(cfg.background));
  for (const auto& poly : polys) {
    const auto mask = rasterize(poly.outline, h, w);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) img[i] = static_cast<float>(poly.intensity);
  }
  img = box_blur(box_blur(img, h, w), h, w);
  Rng rng(seed);
  for (auto& v : img) v = std::clamp(v + static_cast<float>(cfg.pixel_noise) * rng.normal(), 0.0f, 1.0f);
  return Tensor(Shape{1, h, w}, std::move(img));
}

Tensor render(const ShapeParams& params, const SynthConfig& cfg, std::uint64_t seed) {
  return render_polygons(filled(params, cfg), cfg, seed);
}

Sample make_sample(const std::string& id, std::uint64_t seed, const SynthConfig& cfg) {
  Sample s;
  s.id = id;
  s.seed = seed;
  const ShapeParams params = sample_shape(seed, cfg);
  s.image = render(params, cfg, mix_seed(seed));
  s.landmarks = contour_landmarks(params, cfg.topology_spec());
  s.annotated.assign(static_cast<std::size_t>(s.landmarks.shape()[0]), 1);
  return s;
}

namespace {

std::vector<Sample> make_split(int count, std::uint64_t master_seed, std::uint64_t split, const std::string& prefix,
                               const SynthConfig& cfg) {
  std::vector<Sample> out(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", prefix.c_str(), i);
    out[static_cast<std::size_t>(i)] = make_sample(id, derive_seed(master_seed, split, static_cast<std::uint64_t>(i)), cfg);
  }
  return out;
}

}  // namespace

Dataset make_dataset(int n_train, int n_val, int n_test, std::uint64_t master_seed, const SynthConfig& cfg) {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("dataset split counts must be >= 1");
  return {make_split(n_train, master_seed, 0, "train", cfg), make_split(n_val, master_seed, 1, "val", cfg),
          make_split(n_test, master_seed, 2, "test", cfg)};
}

std::vector<Polygon> wrongshape_outlines(const ShapeParams& params, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x57a2ULL));
  std::vector<Polygon> out;
  for (const auto& c : params.structures) {
    const int points = 5 + static_cast<int>(rng.index(3));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Polygon star;
    for (int j = 0; j < 2 * points; ++j) {
      const double phi = phase + std::numbers::pi * j / points;
      const double r = (j % 2 == 0) ? 1.1 : 0.45;
      star.push_back({c.cx + c.a * r * std::cos(phi), c.cy + c.b * r * std::sin(phi)});
    }
    out.push_back(std::move(star));
  }
  return out;
}

Sample make_ood_sample(OodLabel label, const std::string& id, std::uint64_t seed, const SynthConfig& cfg) {
  Sample s;
  s.id = id;
  s.seed = seed;
  s.label = label;
  Rng rng(mix_seed(seed ^ 0x00d0ULL));
  const auto topo = cfg.topology_spec();
  ShapeParams params = sample_shape(seed, cfg);
  s.landmarks = contour_landmarks(params, topo);
  s.annotated.assign(static_cast<std::size_t>(s.landmarks.shape()[0]), 0);

  switch (label) {
    case OodLabel::in_distribution:
      throw ContractError("make_ood_sample called with in_distribution");
    case OodLabel::ood_blank:
      s.image = render_polygons({}, cfg, mix_seed(seed));
      break;
    case OodLabel::ood_noise: {
      std::vector<float> px(static_cast<std::size_t>(cfg.height * cfg.width));
      for (auto& v : px) v = static_cast<float>(rng.uniform(0.0, 1.0));
      s.image = Tensor(Shape{1, cfg.height, cfg.width}, std::move(px));
      break;
    }
    case OodLabel::ood_offcanvas: {
      const int m = s.landmarks.shape()[0];
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxAttempts) throw DataError("offcanvas placement exceeded attempts");
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double mag = rng.uniform(0.7, 1.0);
        const double dx = mag * std::cos(angle);
        const double dy = mag * std::sin(angle);
        int outside = 0;
        for (int i = 0; i < m; ++i) {
          const double x = s.landmarks.at(i, 0) + dx;
          const double y = s.landmarks.at(i, 1) + dy;
          if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) ++outside;
        }
        if (outside * 10 < m * 7) continue;
        for (auto& c : params.structures) {
          c.cx += dx;
          c.cy += dy;
        }
        break;
      }
      s.landmarks = contour_landmarks(params, topo);
      s.image = render(params, cfg, mix_seed(seed));
      break;
    }
    case OodLabel::ood_wrongshape: {
      const auto stars = wrongshape_outlines(params, seed);
      std::vector<FilledPolygon> polys;
      std::vector<Polygon> contours;
      for (std::size_t k = 0; k < stars.size(); ++k) {
        contours.push_back(resample_closed(stars[k], topo[k].node_count));
        polys.push_back({stars[k], params.structures[k].intensity});
      }
      s.landmarks = landmarks_from(contours);
      s.image = render_polygons(polys, cfg, mix_seed(seed));
      break;
    }
  }
  return s;
}

std::vector<Sample> make_ood_set(int n_per_category, std::uint64_t master_seed, const SynthConfig& cfg) {
  if (n_per_category < 1) throw ConfigError("OOD count per category must be >= 1");
  std::vector<Sample> out(kOodCategories.size() * static_cast<std::size_t>(n_per_category));
  const int total = static_cast<int>(out.size());
#pragma omp parallel for schedule(dynamic)
  for (int idx = 0; idx < total; ++idx) {
    const auto cat = static_cast<std::size_t>(idx / n_per_category);
    const int i = idx % n_per_category;
    const OodLabel label = kOodCategories[cat];
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", to_string(label).c_str(), i);
    out[static_cast<std::size_t>(idx)] =
        make_ood_sample(label, id, derive_seed(master_seed, 3 + cat, static_cast<std::uint64_t>(i)), cfg);
  }
  return out;
}

int curvature_sign_changes(const Polygon& poly) {
  const std::size_t n = poly.size();
  std::vector<int> signs;
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = poly[(i + n - 1) % n];
    const Point b = poly[i];
    const Point c = poly[(i + 1) % n];
    const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    if (cross > 1e-12) signs.push_back(1);
    else if (cross < -1e-12) signs.push_back(-1);
  }
  int changes = 0;
  for (std::size_t i = 0; i < signs.size(); ++i)
    if (signs[i] != signs[(i + 1) % signs.size()]) ++changes;
  return changes;
}

}  // namespace luq
