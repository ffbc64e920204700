#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "luq/uncertainty.hpp"
#include "support/tempdir.hpp"

using namespace luq;

namespace {

PredictionEnsemble ensemble(int n, int m, std::vector<float> values) {
  return make_ensemble(Tensor(Shape{n, m, 2}, std::move(values)));
}

}  // namespace

TEST(LatentUncertainty, Examples) {
  LatentDistribution unit{Tensor(Shape{4}, 0.0f), Tensor(Shape{4}, 0.0f)};
  EXPECT_DOUBLE_EQ(latent_uncertainty(unit), 1.0);
  LatentDistribution d{Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {0.0f, static_cast<float>(2 * std::log(2.0))})};
  EXPECT_NEAR(latent_uncertainty(d), 1.5, 1e-6);
  LatentDistribution swapped{Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {d.logvar[1], d.logvar[0]})};
  EXPECT_EQ(latent_uncertainty(swapped), latent_uncertainty(d));
}

TEST(NodewiseUncertainty, Examples) {
  const auto same = nodewise_uncertainty(ensemble(3, 2, {0.1f, 0.2f, 0.3f, 0.4f, 0.1f, 0.2f, 0.3f, 0.4f,
                                                         0.1f, 0.2f, 0.3f, 0.4f}));
  for (double v : same) EXPECT_EQ(v, 0.0);
  const auto two = nodewise_uncertainty(ensemble(2, 1, {0.0f, 0.0f, 0.2f, 0.0f}));
  ASSERT_EQ(two.size(), 1u);
  EXPECT_NEAR(two[0], 0.1, 1e-6);
  const auto doubled = nodewise_uncertainty(ensemble(2, 1, {0.0f, 0.0f, 0.4f, 0.2f}));
  const auto base = nodewise_uncertainty(ensemble(2, 1, {0.0f, 0.0f, 0.2f, 0.1f}));
  EXPECT_NEAR(doubled[0], 2 * base[0], 1e-6);
  EXPECT_NEAR(base[0], std::sqrt(0.01 + 0.0025), 1e-6);
}

TEST(NodewiseUncertainty, NeedsTwoSamples) {
  PredictionEnsemble e;
  e.n = 1;
  e.samples = Tensor(Shape{1, 1, 2});
  e.node_mean = Tensor(Shape{1, 2});
  e.node_std_xy = Tensor(Shape{1, 2});
  EXPECT_THROW(nodewise_uncertainty(e), ContractError);
}

TEST(PredictiveScore, ExamplesAndBounds) {
  EXPECT_EQ(predictive_score(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_NEAR(predictive_score(std::vector<double>{0.1, 0.3}), 0.2, 1e-15);
  EXPECT_EQ(predictive_score(std::vector<double>{0.3, 0.1}), predictive_score(std::vector<double>{0.1, 0.3}));
  const std::vector<double> v{0.2, 0.05, 0.7, 0.3};
  const double s = predictive_score(v);
  EXPECT_GE(s, 0.05);
  EXPECT_LE(s, 0.7);
}

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3, 4};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-12);
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4}), 0.9820, 5e-5);
  // Hand formula: cov 1.5, var 1 and 7/3 (sample); 1.5 / sqrt(7/3).
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4}), 1.5 / std::sqrt(7.0 / 3.0), 1e-12);
  EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), ContractError);
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), ContractError);
  EXPECT_THROW(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), ContractError);
}

TEST(Spearman, Examples) {
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{0.1, 5, 7, 100}), 1.0, 1e-12);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{10, 30, 20}), 0.5, 1e-12);
  const std::vector<double> x{0.3, 1.2, -0.5, 2.0, 0.9};
  const std::vector<double> y{1.0, 0.2, 0.4, 3.0, -1.0};
  std::vector<double> tx, ty;
  for (double v : x) tx.push_back(std::exp(v));
  for (double v : y) ty.push_back(v * v * v + 2);
  EXPECT_NEAR(spearman(tx, ty), spearman(x, y), 1e-12);
  const auto r = average_ranks(std::vector<double>{5, 1, 5, 3});
  EXPECT_EQ(r, (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(NodeError, Examples) {
  Tensor a(Shape{2, 2}, {0.1f, 0.1f, 0.5f, 0.5f});
  for (double e : node_error(a, a)) EXPECT_EQ(e, 0.0);
  Tensor b(Shape{2, 2}, {0.1f, 0.1f, 0.8f, 0.9f});
  const auto e = node_error(b, a);
  EXPECT_EQ(e[0], 0.0);
  EXPECT_NEAR(e[1], 0.5, 1e-6);
  Tensor as = a, bs = b;
  for (int i = 0; i < 4; ++i) {
    as[i] += 0.125f;
    bs[i] += 0.125f;
  }
  const auto shifted = node_error(bs, as);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(shifted[i], e[i], 1e-6);
  EXPECT_THROW(node_error(a, Tensor(Shape{3, 2})), ShapeError);
}

TEST(Median, OddEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

namespace {

UncertaintyRecord sample_record(const std::string& id, double base) {
  UncertaintyRecord r;
  r.id = id;
  for (int i = 0; i < 6; ++i) r.node_mean.push_back(base + 0.1 * i + 1.0 / 3.0);
  for (int i = 0; i < 3; ++i) r.node_std.push_back(base * 1e-3 + i * 1e-7);
  for (int i = 0; i < 4; ++i) r.latent_sigma.push_back(std::exp(-i - base));
  r.latent_uncertainty = std::accumulate(r.latent_sigma.begin(), r.latent_sigma.end(), 0.0) / 4;
  r.predictive_score = std::accumulate(r.node_std.begin(), r.node_std.end(), 0.0) / 3;
  return r;
}

}  // namespace

TEST(Records, JsonLineSchemaAndRoundTrip) {
  const auto r = sample_record("test_00007", 0.7);
  const std::string line = to_json_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(line);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"id", "latent_sigma", "latent_uncertainty", "node_mean", "node_std",
                                            "predictive_score"}));
  const auto back = record_from_json_line(line);
  EXPECT_EQ(back.id, r.id);
  EXPECT_EQ(back.node_mean, r.node_mean);
  EXPECT_EQ(back.node_std, r.node_std);
  EXPECT_EQ(back.latent_sigma, r.latent_sigma);
  EXPECT_EQ(back.latent_uncertainty, r.latent_uncertainty);
  EXPECT_EQ(back.predictive_score, r.predictive_score);

  auto extra = j;
  extra["note"] = 1;
  EXPECT_THROW(record_from_json_line(extra.dump()), DataError);
  auto missing = j;
  missing.erase("node_std");
  EXPECT_THROW(record_from_json_line(missing.dump()), DataError);
}

TEST(Records, FileRoundTripAndDiagnostics) {
  luq::testing::TempDir tmp;
  std::vector<UncertaintyRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(sample_record("img_" + std::to_string(i), i * 0.37));
  const auto path = tmp.path() / "uncertainty.jsonl";
  write_records(path, recs);
  const auto back = read_records(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(to_json_line(back[i]), to_json_line(recs[i]));
  const std::string text = read_file(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);

  write_file_atomic(path, text + "{\"id\": \"broken\"\n");
  try {
    read_records(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("uncertainty.jsonl:6"), std::string::npos) << e.what();
  }
}

TEST(Records, FromPrediction) {
  Prediction p;
  p.latent = {Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {0.0f, static_cast<float>(2 * std::log(3.0))})};
  p.ensemble = ensemble(2, 2, {0.0f, 0.0f, 0.5f, 0.5f, 0.2f, 0.0f, 0.5f, 0.5f});
  const auto r = make_record("x", p);
  EXPECT_NEAR(r.latent_uncertainty, 2.0, 1e-6);
  EXPECT_NEAR(r.node_std[0], 0.1, 1e-6);
  EXPECT_EQ(r.node_std[1], 0.0);
  EXPECT_NEAR(r.predictive_score, 0.05, 1e-6);
  EXPECT_NEAR(r.node_mean[0], 0.1, 1e-6);
  EXPECT_EQ(r.node_mean.size(), 4u);
}
