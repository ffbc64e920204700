#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "luq/model.hpp"

namespace luq {

// Mean over latent dims of exp(logvar / 2).
double latent_uncertainty(const LatentDistribution& d);

// Per node sqrt(var_x + var_y), population variances over the ensemble.
std::vector<double> nodewise_uncertainty(const PredictionEnsemble& ens);

// Mean of the node-wise stds.
double predictive_score(std::span<const double> node_std);

// Sample Pearson coefficient; needs >= 3 points and nonzero variance in both.
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson on fractional ranks (ties share their average rank).
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> x);

// Per-node Euclidean distance in normalized units; inputs [M x 2].
std::vector<double> node_error(const Tensor& pred_mean, const Tensor& target);

double median(std::vector<double> v);

struct UncertaintyRecord {
  std::string id;
  std::vector<double> node_mean;  // flat x0, y0, x1, y1, ...
  std::vector<double> node_std;
  std::vector<double> latent_sigma;
  double latent_uncertainty = 0.0;
  double predictive_score = 0.0;
};

UncertaintyRecord make_record(const std::string& id, const Prediction& p);

std::string to_json_line(const UncertaintyRecord& r);
UncertaintyRecord record_from_json_line(const std::string& line);

void write_records(const std::filesystem::path& path, const std::vector<UncertaintyRecord>& records);
// DataError names the offending line.
std::vector<UncertaintyRecord> read_records(const std::filesystem::path& path);

}  // namespace luq
