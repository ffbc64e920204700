#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "luq/train.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace luq;

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    rows.push_back(f);
  }
  return rows;
}

LatentDistribution dist(std::vector<float> mu, std::vector<float> logvar) {
  const int n = static_cast<int>(mu.size());
  return {Tensor(Shape{n}, std::move(mu)), Tensor(Shape{n}, std::move(logvar))};
}

}  // namespace

TEST(MaskedMse, Examples) {
  Tensor a(Shape{2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  EXPECT_EQ(masked_mse(a, a, {1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(masked_mse(Tensor(Shape{1, 2}, {0.0f, 0.0f}), Tensor(Shape{1, 2}, {1.0f, 1.0f}), {1}), 1.0);
  Tensor b = a;
  b[2] = 0.9f;
  EXPECT_EQ(masked_mse(b, a, {1, 0}), 0.0);
  EXPECT_THROW(masked_mse(a, a, {0, 0}), ContractError);
  EXPECT_THROW(masked_mse(a, Tensor(Shape{3, 2}), {1, 1, 1}), ShapeError);
}

TEST(MaskedMse, RecordedMatchesDouble) {
  Rng rng(1);
  const Tensor p = luq::testing::random_tensor({2, 3, 2}, rng, 0, 1);
  const Tensor y = luq::testing::random_tensor({2, 3, 2}, rng, 0, 1);
  Tensor mask(Shape{2, 3, 2}, 1.0f);
  mask[2] = mask[3] = 0.0f;  // node 1 of sample 0
  mask[8] = mask[9] = 0.0f;  // node 1 of sample 1
  Tape t;
  const double v = t.value(masked_mse(t, t.constant(p), y, mask)).item();
  EXPECT_NEAR(v, masked_mse(p, y, {1, 0, 1}), 1e-6);
}

TEST(MaskedMse, MaskedOutGradientIsExactlyZero) {
  Rng rng(2);
  const Tensor y = luq::testing::random_tensor({1, 4, 2}, rng, 0, 1);
  Tensor mask(Shape{1, 4, 2}, 1.0f);
  mask[4] = mask[5] = 0.0f;
  Tape t;
  Var p = t.variable(luq::testing::random_tensor({1, 4, 2}, rng, 0, 1));
  t.backward(masked_mse(t, p, y, mask));
  EXPECT_EQ(t.grad(p)[4], 0.0f);
  EXPECT_EQ(t.grad(p)[5], 0.0f);
  EXPECT_NE(t.grad(p)[0], 0.0f);
  Tape u;
  EXPECT_THROW(masked_mse(u, u.constant(y), y, Tensor(Shape{1, 4, 2}, 0.0f)), ContractError);
}

TEST(KlDivergence, ClosedForm) {
  EXPECT_NEAR(kl_divergence(dist({0, 0, 0}, {0, 0, 0})), 0.0, 1e-12);
  EXPECT_NEAR(kl_divergence(dist({1, 0}, {0, 0})), 0.5, 1e-12);
  EXPECT_NEAR(kl_divergence(dist({0}, {1})), 0.5 * (std::exp(1.0) - 2.0), 1e-6);
  EXPECT_NEAR(0.5 * (std::exp(1.0) - 2.0), 0.3591, 1e-4);
}

TEST(KlDivergence, NonNegativeAndRecordedMatches) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Tensor mu = luq::testing::random_tensor({2, 6}, rng, -3, 3);
    const Tensor lv = luq::testing::random_tensor({2, 6}, rng, -5, 5);
    Tape t;
    const double batch = t.value(kl_divergence(t, t.constant(mu), t.constant(lv))).item();
    double expect = 0.0;
    for (int n = 0; n < 2; ++n) {
      LatentDistribution d{Tensor(Shape{6}), Tensor(Shape{6})};
      std::copy_n(mu.ptr() + 6 * n, 6, d.mu.ptr());
      std::copy_n(lv.ptr() + 6 * n, 6, d.logvar.ptr());
      const double k = kl_divergence(d);
      EXPECT_GE(k, 0.0);
      expect += k / 2;
    }
    EXPECT_NEAR(batch, expect, 1e-5 * std::max(1.0, expect));
  }
}

TEST(KlWeight, Schedule) {
  TrainConfig c;
  EXPECT_NEAR(kl_weight(0, 1000, c), 1e-5, 1e-15);
  EXPECT_NEAR(kl_weight(500, 1000, c), 1e-2, 1e-12);
  EXPECT_NEAR(kl_weight(1000, 1000, c), 1e-2, 1e-12);
  EXPECT_NEAR(kl_weight(250, 1000, c), std::sqrt(1e-5 * 1e-2), 1e-9);
  EXPECT_NEAR(3.162e-4, std::sqrt(1e-7), 1e-7);
  double prev = 0.0;
  for (long s = 0; s <= 1000; ++s) {
    const double b = kl_weight(s, 1000, c);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_THROW(kl_weight(1001, 1000, c), ContractError);
  EXPECT_THROW(kl_weight(-1, 1000, c), ContractError);
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  c.kl_start = 1e-1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.kl_warmup_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 3;
  c.seed = 9;
  EXPECT_EQ(to_json(train_config_from_json(to_json(c))), to_json(c));
  EXPECT_THROW(train_config_from_json({{"learning_rat", 1}}), ConfigError);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Weights w;
  w.add("a", Tensor(Shape{3}, {1.0f, -2.0f, 0.5f}));
  TrainConfig c;
  AdamState s = adam_init(w);
  adam_step(w, {Tensor(Shape{3}, {0.1f, 0.1f, 0.1f})}, s, c);
  const float m0 = s.m[0][0], v0 = s.v[0][0];
  adam_step(w, {Tensor(Shape{3}, 0.0f)}, s, c);
  // Stored moments decay; parameters keep moving on momentum only.
  EXPECT_FLOAT_EQ(s.m[0][0], 0.9f * m0);
  EXPECT_FLOAT_EQ(s.v[0][0], 0.999f * v0);

  Weights fresh;
  fresh.add("a", Tensor(Shape{3}, {1.0f, -2.0f, 0.5f}));
  AdamState z = adam_init(fresh);
  adam_step(fresh, {Tensor(Shape{3}, 0.0f)}, z, c);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(fresh["a"][i], (std::vector<float>{1.0f, -2.0f, 0.5f})[i]);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Weights w;
  w.add("a", Tensor(Shape{4}, {0.0f, 1.0f, -1.0f, 2.0f}));
  TrainConfig c;
  AdamState s = adam_init(w);
  const std::vector<float> g{0.3f, -5.0f, 1e-2f, -1e-3f};
  const std::vector<float> x0(w["a"].data().begin(), w["a"].data().end());
  adam_step(w, {Tensor(Shape{4}, g)}, s, c);
  for (int i = 0; i < 4; ++i) {
    const double delta = w["a"][i] - x0[i];
    const double expect = -c.learning_rate * (g[i] > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(delta, expect, 1e-6) << i;
  }
  EXPECT_EQ(s.t, 1);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Weights w;
  w.add("enc.conv1.w", Tensor(Shape{2}, 0.0f));
  w.add("dec.out.b", Tensor(Shape{2}, 0.0f));
  AdamState s = adam_init(w);
  try {
    adam_step(w, {Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {1.0f, NAN})}, s, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("dec.out.b"), std::string::npos);
  }
}

TEST(LandmarkError, Pixels) {
  Tensor a(Shape{1, 2, 2}, {0.5f, 0.5f, 0.0f, 0.0f});
  Tensor b(Shape{1, 2, 2}, {0.5f + 3.0f / 63, 0.5f + 4.0f / 63, 0.0f, 0.0f});
  EXPECT_NEAR(mean_landmark_error_px(a, b, 64, 64), 2.5, 1e-5);
}

namespace {

TrainConfig small_run(int steps) {
  TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(TrainLoop, SingleSampleOverfit) {
  const Dataset d = make_dataset(1, 1, 1, 21, default_synth_config());
  TrainConfig c;
  c.max_steps = 500;
  c.batch_size = 1;
  c.seed = 5;
  const TrainResult r = train_loop(d.train, d.val, ModelConfig{}, c);
  EXPECT_EQ(r.steps, 500);
  double last = NAN;
  for (const auto& row : csv_rows(r.metrics_csv))
    if (row[1] == "train") last = std::stod(row[2]);
  EXPECT_LT(last, 1e-3);
}

TEST(TrainLoop, CsvDeterministicBetaMonotoneAndCheckpoints) {
  const Dataset d = make_dataset(16, 4, 1, 22, default_synth_config());
  luq::testing::TempDir a, b;
  const TrainResult ra = train_loop(d.train, d.val, ModelConfig{}, small_run(12), a.path());
  const TrainResult rb = train_loop(d.train, d.val, ModelConfig{}, small_run(12), b.path());
  EXPECT_EQ(ra.metrics_csv, rb.metrics_csv);
  EXPECT_EQ(read_file(a.path() / "metrics.csv"), ra.metrics_csv);
  EXPECT_EQ(read_file(a.path() / "weights.bin"), read_file(b.path() / "weights.bin"));
  EXPECT_EQ(ra.metrics_csv.substr(0, ra.metrics_csv.find('\n')), "step,split,mse,kl,beta,val_mean_landmark_error_px");

  double prev = 0.0;
  int train_rows = 0, val_rows = 0;
  for (const auto& row : csv_rows(ra.metrics_csv)) {
    const double beta = std::stod(row[4]);
    EXPECT_GE(beta, prev);
    prev = beta;
    EXPECT_GE(std::stod(row[2]), 0.0);
    EXPECT_GE(std::stod(row[3]), 0.0);
    if (row[1] == "train") ++train_rows;
    if (row[1] == "val") {
      ++val_rows;
      EXPECT_FALSE(row[5].empty());
    }
  }
  EXPECT_EQ(train_rows, 12);
  EXPECT_EQ(val_rows, 3);
  const Checkpoint fin = load_checkpoint(a.path() / "final");
  EXPECT_EQ(fin.step, 12);
  EXPECT_NO_THROW(load_checkpoint(a.path()));

  TrainConfig other = small_run(12);
  other.seed = 12;
  EXPECT_NE(train_loop(d.train, d.val, ModelConfig{}, other).metrics_csv, ra.metrics_csv);
}

TEST(TrainLoop, SkipVariantRuns) {
  const Dataset d = make_dataset(8, 2, 1, 23, default_synth_config());
  ModelConfig m;
  m.variant = Variant::skip;
  const TrainResult r = train_loop(d.train, d.val, m, small_run(4));
  EXPECT_EQ(r.steps, 4);
  EXPECT_TRUE(std::isfinite(r.best_val_error_px));
}

TEST(TrainLoop, NumericFailureDumpsLastGood) {
  const Dataset d = make_dataset(4, 1, 1, 24, default_synth_config());
  TrainConfig c = small_run(3);
  c.learning_rate = 1e30;
  c.recon_weight = 1e30;
  luq::testing::TempDir tmp;
  EXPECT_THROW(train_loop(d.train, d.val, ModelConfig{}, c, tmp.path()), NumericError);
  EXPECT_TRUE(std::filesystem::exists(tmp.path() / "last_good" / "weights.json"));
  EXPECT_NE(read_file(tmp.path() / "metrics.csv").find(",abort,"), std::string::npos);
}

TEST(TrainLoop, EmptyTrainingSplitRejected) {
  EXPECT_THROW(train_loop({}, {}, ModelConfig{}, small_run(1)), DataError);
}
