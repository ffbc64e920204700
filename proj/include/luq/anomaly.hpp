#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "luq/corrupt.hpp"
#include "luq/rng.hpp"
#include "luq/synthdata.hpp"

namespace luq {

inline constexpr double kEulerGamma = 0.5772156649;

// H(i) = ln i + gamma.
double harmonic(double i);
// Average unsuccessful-search path length in a BST of n points.
double iforest_c(double n);

struct IsolationTree {
  struct Node {
    int feature = -1;  // -1: leaf
    double split = 0.0;
    int left = -1;  // x[feature] < split
    int right = -1;
    int size = 0;
    int depth = 0;
  };
  std::vector<Node> nodes;  // nodes[0] is the root
};

struct IsolationForest {
  int n_trees = 100;
  int psi = 256;  // after capping at the dataset size
  int max_depth = 8;
  int dims = 0;
  std::vector<IsolationTree> trees;
};

inline constexpr int kDefaultTrees = 100;
inline constexpr int kDefaultSubsample = 256;

using Points = std::vector<std::vector<double>>;

IsolationForest iforest_fit(const Points& data, Rng& rng, int n_trees = kDefaultTrees, int psi = kDefaultSubsample);
// Edges to the leaf plus c(leaf size).
double iforest_path_length(const IsolationTree& tree, std::span<const double> x);
// 2^(-E[h(x)] / c(psi)), in (0, 1).
double iforest_score(const IsolationForest& forest, std::span<const double> x);

// P(pos > neg) + 0.5 P(tie), by pair counting over sorted lists.
double roc_auc(std::span<const double> pos, std::span<const double> neg);

// Scott's rule: sample std * n^(-1/5).
double scott_bandwidth(std::span<const double> scores);
std::vector<double> kde(std::span<const double> scores, std::span<const double> grid);
std::vector<double> linspace(double lo, double hi, int n);

struct DetectorResult {
  std::map<std::string, double> auc_by_category;  // test half
  double pooled_auc = 0.0;
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

struct OodReport {
  DetectorResult predictive;
  DetectorResult iforest;
  int selected_trees = 0;
  std::map<int, double> validation_auc;  // iforest n_trees -> pooled validation AUC
  std::size_t n_fit = 0;
  std::size_t n_id_test = 0;
  std::size_t n_ood_test = 0;
};

inline const std::vector<int> kTreeCandidates{50, 100, 200};

// Forest fitted on id_fit latent sigma vectors; even-indexed ID/OOD images
// select n_trees, odd-indexed ones are scored for the report.
OodReport ood_experiment(const std::vector<Sample>& id_fit, const std::vector<Sample>& id_heldout,
                         const std::vector<Sample>& ood, const EvalModel& model, int n_samples, std::uint64_t seed);

// {detector -> {category -> auc}}.
std::string ood_report_json(const OodReport& r);
// Columns grid, density_id, density_ood; empty density when a group has no spread.
std::string kde_csv(const DetectorResult& d, int points = 200);

// Latent sigma vectors for many images, encoder only.
Points latent_sigmas(const std::vector<Sample>& samples, const EvalModel& model);

}  // namespace luq
