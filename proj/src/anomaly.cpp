#include "luq/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "luq/uncertainty.hpp"

namespace luq {

using nlohmann::json;

double harmonic(double i) { return std::log(i) + kEulerGamma; }

double iforest_c(double n) {
  if (n <= 1.0) return 0.0;
  if (n == 2.0) return 1.0;
  return 2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n;
}

namespace {

int build_node(IsolationTree& tree, const Points& data, std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
               int depth, int max_depth, Rng& rng) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[id].size = static_cast<int>(hi - lo);
  tree.nodes[id].depth = depth;
  if (depth >= max_depth || hi - lo <= 1) return id;

  // Features that still vary inside this node.
  const std::size_t dims = data[idx[lo]].size();
  std::vector<std::size_t> open;
  std::vector<std::pair<double, double>> range(dims);
  for (std::size_t f = 0; f < dims; ++f) {
    double mn = data[idx[lo]][f], mx = mn;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      mn = std::min(mn, data[idx[i]][f]);
      mx = std::max(mx, data[idx[i]][f]);
    }
    range[f] = {mn, mx};
    if (mx > mn) open.push_back(f);
  }
  if (open.empty()) return id;  // duplicates

  const std::size_t f = open[rng.index(open.size())];
  const auto [mn, mx] = range[f];
  double split = mn;
  while (!(split > mn && split < mx)) split = rng.uniform(mn, mx);
  const auto mid = std::partition(idx.begin() + static_cast<long>(lo), idx.begin() + static_cast<long>(hi),
                                  [&](std::size_t i) { return data[i][f] < split; });
  const std::size_t m = static_cast<std::size_t>(mid - idx.begin());
  tree.nodes[id].feature = static_cast<int>(f);
  tree.nodes[id].split = split;
  const int l = build_node(tree, data, idx, lo, m, depth + 1, max_depth, rng);
  const int r = build_node(tree, data, idx, m, hi, depth + 1, max_depth, rng);
  tree.nodes[id].left = l;
  tree.nodes[id].right = r;
  return id;
}

}  // namespace

IsolationForest iforest_fit(const Points& data, Rng& rng, int n_trees, int psi) {
  if (data.size() < 2) throw ContractError("iforest_fit needs at least 2 points");
  if (n_trees < 1 || psi < 2) throw ConfigError("iforest needs n_trees >= 1 and psi >= 2");
  const std::size_t dims = data.front().size();
  if (dims == 0) throw ContractError("iforest_fit: empty feature vectors");
  for (const auto& p : data)
    if (p.size() != dims) throw ContractError("iforest_fit: feature vectors differ in length");
  IsolationForest f;
  f.n_trees = n_trees;
  f.psi = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(psi), data.size()));
  f.max_depth = static_cast<int>(std::ceil(std::log2(static_cast<double>(f.psi))));
  f.dims = static_cast<int>(dims);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  for (int t = 0; t < n_trees; ++t) {
    // Partial Fisher-Yates: the first psi entries are a uniform subsample.
    for (std::size_t i = 0; i < static_cast<std::size_t>(f.psi); ++i)
      std::swap(all[i], all[i + rng.index(all.size() - i)]);
    std::vector<std::size_t> idx(all.begin(), all.begin() + f.psi);
    IsolationTree tree;
    build_node(tree, data, idx, 0, idx.size(), 0, f.max_depth, rng);
    f.trees.push_back(std::move(tree));
  }
  return f;
}

double iforest_path_length(const IsolationTree& tree, std::span<const double> x) {
  int n = 0;
  while (tree.nodes[n].feature >= 0)
    n = x[static_cast<std::size_t>(tree.nodes[n].feature)] < tree.nodes[n].split ? tree.nodes[n].left
                                                                                   : tree.nodes[n].right;
  return tree.nodes[n].depth + iforest_c(tree.nodes[n].size);
}

double iforest_score(const IsolationForest& forest, std::span<const double> x) {
  if (forest.trees.empty()) throw ContractError("iforest_score: forest is not fitted");
  if (static_cast<int>(x.size()) != forest.dims) throw ContractError("iforest_score: wrong feature length");
  double h = 0.0;
  for (const auto& t : forest.trees) h += iforest_path_length(t, x);
  h /= static_cast<double>(forest.trees.size());
  return std::pow(2.0, -h / iforest_c(forest.psi));
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ContractError("roc_auc needs non-empty positive and negative lists");
  std::vector<double> n(neg.begin(), neg.end());
  std::sort(n.begin(), n.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(n.begin(), n.end(), p);
    const auto hi = std::upper_bound(lo, n.end(), p);
    wins += static_cast<double>(lo - n.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(n.size()));
}

double scott_bandwidth(std::span<const double> scores) {
  if (scores.size() < 2) throw ContractError("kde needs at least 2 scores");
  std::vector<double> xs(scores.begin(), scores.end());
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : xs) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw ContractError("kde: scores have zero spread");
  return sd * std::pow(n, -0.2);
}

std::vector<double> kde(std::span<const double> scores, std::span<const double> grid) {
  const double h = scott_bandwidth(scores);
  // Sorted copy: the sum order, and so the result, ignores input order.
  std::vector<double> xs(scores.begin(), scores.end());
  std::sort(xs.begin(), xs.end());
  const double norm = 1.0 / (static_cast<double>(xs.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out;
  out.reserve(grid.size());
  for (double g : grid) {
    double s = 0.0;
    for (double x : xs) {
      const double u = (g - x) / h;
      s += std::exp(-0.5 * u * u);
    }
    out.push_back(s * norm);
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return g;
}

Points latent_sigmas(const std::vector<Sample>& samples, const EvalModel& model) {
  Points out;
  constexpr std::size_t kBatch = 64;
  for (std::size_t b = 0; b < samples.size(); b += kBatch) {
    const std::size_t e = std::min(samples.size(), b + kBatch);
    std::vector<const Tensor*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&samples[i].image);
    Tape t;
    const BoundWeights bw = bind(t, model.weights, false);
    const Encoded enc = encode(t, bw, model.config, t.constant(stack_images(imgs)));
    const Tensor& lv = t.value(enc.logvar);
    const int l = model.config.latent_dim;
    for (std::size_t i = 0; i < e - b; ++i) {
      std::vector<double> s(static_cast<std::size_t>(l));
      for (int d = 0; d < l; ++d) s[static_cast<std::size_t>(d)] = std::exp(0.5 * static_cast<double>(lv[i * l + d]));
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

struct Scored {
  double predictive = 0.0;
  std::vector<double> sigma;
  std::string category;
};

std::vector<Scored> score_all(const std::vector<Sample>& samples, const EvalModel& model, int n_samples,
                              std::uint64_t seed) {
  std::vector<Scored> out;
  for (const auto& s : samples) {
    // Per-image stream keyed by id, so subsets and orderings score alike.
    Rng rng(derive_seed(seed, hash_string(s.id)));
    const Prediction p = sample_predictions(s.image, model.weights, model.config, model.adj, n_samples, rng);
    Scored sc;
    sc.predictive = predictive_score(nodewise_uncertainty(p.ensemble));
    for (float lv : p.latent.logvar.data()) sc.sigma.push_back(std::exp(0.5 * static_cast<double>(lv)));
    sc.category = to_string(s.label);
    out.push_back(std::move(sc));
  }
  return out;
}

template <class F>
DetectorResult detector(const std::vector<const Scored*>& id, const std::vector<const Scored*>& ood, F score) {
  DetectorResult d;
  for (const auto* s : id) d.id_scores.push_back(score(*s));
  std::map<std::string, std::vector<double>> by_cat;
  for (const auto* s : ood) {
    d.ood_scores.push_back(score(*s));
    by_cat[s->category].push_back(d.ood_scores.back());
  }
  if (d.id_scores.empty() || d.ood_scores.empty()) throw DataError("OOD experiment needs ID and OOD images in every half");
  for (const auto& [cat, v] : by_cat) d.auc_by_category[cat] = roc_auc(v, d.id_scores);
  d.pooled_auc = roc_auc(d.ood_scores, d.id_scores);
  return d;
}

}  // namespace

OodReport ood_experiment(const std::vector<Sample>& id_fit, const std::vector<Sample>& id_heldout,
                         const std::vector<Sample>& ood, const EvalModel& model, int n_samples, std::uint64_t seed) {
  if (id_fit.size() < 2) throw DataError("OOD experiment needs at least 2 ID images to fit the forest");
  OodReport rep;
  const Points fit = latent_sigmas(id_fit, model);
  rep.n_fit = fit.size();
  const auto id_scored = score_all(id_heldout, model, n_samples, seed);
  const auto ood_scored = score_all(ood, model, n_samples, seed);

  std::vector<const Scored*> id_val, id_test, ood_val, ood_test;
  for (std::size_t i = 0; i < id_scored.size(); ++i) (i % 2 == 0 ? id_val : id_test).push_back(&id_scored[i]);
  for (std::size_t i = 0; i < ood_scored.size(); ++i) (i % 2 == 0 ? ood_val : ood_test).push_back(&ood_scored[i]);
  rep.n_id_test = id_test.size();
  rep.n_ood_test = ood_test.size();

  rep.predictive = detector(id_test, ood_test, [](const Scored& s) { return s.predictive; });

  double best = -1.0;
  IsolationForest chosen;
  for (int trees : kTreeCandidates) {
    Rng rng(derive_seed(seed, 0x69666f72ULL, static_cast<std::uint64_t>(trees)));
    IsolationForest f = iforest_fit(fit, rng, trees);
    const auto val = detector(id_val, ood_val, [&](const Scored& s) { return iforest_score(f, s.sigma); });
    rep.validation_auc[trees] = val.pooled_auc;
    if (val.pooled_auc > best) {
      best = val.pooled_auc;
      rep.selected_trees = trees;
      chosen = std::move(f);
    }
  }
  rep.iforest = detector(id_test, ood_test, [&](const Scored& s) { return iforest_score(chosen, s.sigma); });
  return rep;
}

std::string ood_report_json(const OodReport& r) {
  json j = json::object();
  j["predictive"] = r.predictive.auc_by_category;
  j["iforest"] = r.iforest.auc_by_category;
  return j.dump(2) + "\n";
}

std::string kde_csv(const DetectorResult& d, int points) {
  std::vector<double> all = d.id_scores;
  all.insert(all.end(), d.ood_scores.begin(), d.ood_scores.end());
  const auto [mn, mx] = std::minmax_element(all.begin(), all.end());
  double pad = 0.0;
  for (const auto* group : {&d.id_scores, &d.ood_scores}) {
    try {
      pad = std::max(pad, 3.0 * scott_bandwidth(*group));
    } catch (const ContractError&) {
    }
  }
  if (pad == 0.0) pad = 0.05 * std::max(1e-12, *mx - *mn);
  const auto grid = linspace(*mn - pad, *mx + pad, points);
  auto density = [&](const std::vector<double>& s) {
    try {
      return kde(s, grid);
    } catch (const ContractError&) {
      return std::vector<double>{};
    }
  };
  const auto di = density(d.id_scores), dood = density(d.ood_scores);
  std::string out = "grid,density_id,density_ood\n";
  for (std::size_t i = 0; i < grid.size(); ++i)
    out += format_double(grid[i]) + "," + (di.empty() ? "" : format_double(di[i])) + "," +
           (dood.empty() ? "" : format_double(dood[i])) + "\n";
  return out;
}

}  // namespace luq
