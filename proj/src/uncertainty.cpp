#include "luq/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "luq/errors.hpp"
#include "luq/io.hpp"

namespace luq {

using nlohmann::json;

double latent_uncertainty(const LatentDistribution& d) {
  if (d.logvar.size() == 0) throw ContractError("latent_uncertainty: empty distribution");
  double s = 0.0;
  for (float lv : d.logvar.data()) s += std::exp(0.5 * static_cast<double>(lv));
  return s / static_cast<double>(d.logvar.size());
}

std::vector<double> nodewise_uncertainty(const PredictionEnsemble& ens) {
  if (ens.n < 2) throw ContractError("nodewise_uncertainty needs n >= 2");
  const int m = ens.samples.shape()[1];
  const std::size_t per = static_cast<std::size_t>(m) * 2;
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    double var = 0.0;
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int i = 0; i < ens.n; ++i) mean += ens.samples[i * per + 2 * j + c];
      mean /= ens.n;
      double ss = 0.0;
      for (int i = 0; i < ens.n; ++i) {
        const double d = ens.samples[i * per + 2 * j + c] - mean;
        ss += d * d;
      }
      var += ss / ens.n;
    }
    out[static_cast<std::size_t>(j)] = std::sqrt(var);
  }
  return out;
}

double predictive_score(std::span<const double> node_std) {
  if (node_std.empty()) throw ContractError("predictive_score: no nodes");
  return std::accumulate(node_std.begin(), node_std.end(), 0.0) / static_cast<double>(node_std.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("pearson: length mismatch");
  if (x.size() < 3) throw ContractError("pearson: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::vector<double> node_error(const Tensor& pred_mean, const Tensor& target) {
  if (!(pred_mean.shape() == target.shape()) || pred_mean.shape().rank() != 2 || pred_mean.shape()[1] != 2)
    throw ShapeError("node_error: expected matching [M x 2] inputs");
  const int m = pred_mean.shape()[0];
  std::vector<double> e(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    e[static_cast<std::size_t>(i)] = std::hypot(static_cast<double>(pred_mean.at(i, 0)) - target.at(i, 0),
                                                static_cast<double>(pred_mean.at(i, 1)) - target.at(i, 1));
  return e;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

UncertaintyRecord make_record(const std::string& id, const Prediction& p) {
  UncertaintyRecord r;
  r.id = id;
  for (float v : p.ensemble.node_mean.data()) r.node_mean.push_back(v);
  r.node_std = nodewise_uncertainty(p.ensemble);
  for (float lv : p.latent.logvar.data()) r.latent_sigma.push_back(std::exp(0.5 * static_cast<double>(lv)));
  r.latent_uncertainty = latent_uncertainty(p.latent);
  r.predictive_score = predictive_score(r.node_std);
  return r;
}

std::string to_json_line(const UncertaintyRecord& r) {
  const json j = {{"id", r.id},
                  {"node_mean", r.node_mean},
                  {"node_std", r.node_std},
                  {"latent_sigma", r.latent_sigma},
                  {"latent_uncertainty", r.latent_uncertainty},
                  {"predictive_score", r.predictive_score}};
  return j.dump();
}

UncertaintyRecord record_from_json_line(const std::string& line) try {
  const json j = json::parse(line);
  static const std::vector<std::string> fields{"id", "node_mean", "node_std", "latent_sigma", "latent_uncertainty",
                                               "predictive_score"};
  for (const auto& [k, v] : j.items())
    if (std::find(fields.begin(), fields.end(), k) == fields.end()) throw DataError("unexpected field '" + k + "'");
  UncertaintyRecord r;
  r.id = j.at("id").get<std::string>();
  r.node_mean = j.at("node_mean").get<std::vector<double>>();
  r.node_std = j.at("node_std").get<std::vector<double>>();
  r.latent_sigma = j.at("latent_sigma").get<std::vector<double>>();
  r.latent_uncertainty = j.at("latent_uncertainty").get<double>();
  r.predictive_score = j.at("predictive_score").get<double>();
  if (r.node_mean.size() != 2 * r.node_std.size()) throw DataError("node_mean must hold two values per node");
  return r;
} catch (const json::exception& e) {
  throw DataError(std::string("malformed record: ") + e.what());
}

void write_records(const std::filesystem::path& path, const std::vector<UncertaintyRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  write_file_atomic(path, out);
}

std::vector<UncertaintyRecord> read_records(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<UncertaintyRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace luq
