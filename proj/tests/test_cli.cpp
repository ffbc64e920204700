#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include <nlohmann/json.hpp>

#include "luq/errors.hpp"
#include "luq/dataset_io.hpp"
#include "luq/experiment.hpp"
#include "luq/io.hpp"
#include "luq/plot.hpp"
#include "luq/uncertainty.hpp"
#include "support/run_cli.hpp"
#include "support/tempdir.hpp"

using namespace luq;
using luq::testing::run_cli;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "seed": 5,
  "data": {"n_train": 24, "n_val": 6, "n_test": 10, "n_ood_per_category": 3},
  "train": {"max_steps": 6, "batch_size": 8},
  "predict": {"n_samples": 3},
  "corruption": {"n_images": 3, "n_samples": 3},
  "ood": {"n_samples": 3}
})";

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

// One small dataset and checkpoint shared by the command tests.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new luq::testing::TempDir();
    write_file_atomic(dir_->path() / "small.json", kSmallConfig);
    ASSERT_EQ(run_cli(dir_->path(), "--config small.json gen-data --out data").code, 0);
    ASSERT_EQ(run_cli(dir_->path(), "--config small.json train --data data --out run").code, 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  const fs::path& root() const { return dir_->path(); }
  static luq::testing::TempDir* dir_;
};

luq::testing::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST(ExperimentConfigJson, DefaultsRoundTripAndDerivedFields) {
  const ExperimentConfig c;
  EXPECT_EQ(c.data.n_train, 2000);
  EXPECT_EQ(c.data.n_val, 200);
  EXPECT_EQ(c.data.n_test, 200);
  EXPECT_EQ(c.data.n_ood_per_category, 100);
  const auto j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
  EXPECT_FALSE(j["model"].contains("topology"));
  EXPECT_FALSE(j["train"].contains("seed"));

  auto k = j;
  k["seed"] = 77;
  k["data"]["synth"]["structures"].erase(2);
  const auto d = experiment_config_from_json(k);
  EXPECT_EQ(d.train.seed, 77u);
  EXPECT_EQ(d.model.node_count(), 48);
}

TEST(ExperimentConfigJson, UnknownAndDerivedKeysRejected) {
  EXPECT_THROW(experiment_config_from_json({{"seeds", 1}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"data", {{"n_tran", 1}}}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"model", {{"topology", nlohmann::json::array()}}}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"train", {{"seed", 1}}}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"corruption", {{"noise_levels", {0.2, 0.1}}}}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"predict", {{"n_samples", 1}}}}), ConfigError);
  try {
    experiment_config_from_json({{"corruption", {{"blur", 1}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("corruption.blur"), std::string::npos);
  }
}

TEST(ResolveSeed, FlagThenEnvThenConfig) {
  EXPECT_EQ(resolve_seed(3, "7", 11), 3u);
  EXPECT_EQ(resolve_seed(std::nullopt, "7", 11), 7u);
  EXPECT_EQ(resolve_seed(std::nullopt, nullptr, 11), 11u);
  EXPECT_EQ(resolve_seed(std::nullopt, "", 11), 11u);
  EXPECT_THROW(resolve_seed(std::nullopt, "7x", 11), ConfigError);
}

TEST(Plot, SvgIsStandaloneAndStable) {
  plot::Panel p{"t", "x", "y", {{"a", {0, 1, 2}, {1, 3, 2}, false}, {"b", {0.5}, {2}, true}}};
  const std::string svg = plot::render_panels({p});
  EXPECT_EQ(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
  EXPECT_NE(svg.find(">a</text>"), std::string::npos);
  EXPECT_EQ(svg, plot::render_panels({p}));
  const std::string box = plot::render_boxes("b", "v", {{"inside", {1, 2, 3, 4, 100}}, {"outside", {0.5, 0.7}}});
  EXPECT_NE(box.find("<rect x="), std::string::npos);
  EXPECT_NE(box.find("inside (n=5)"), std::string::npos);
}

TEST(Plot, MalformedCsvNamesLine) {
  luq::testing::TempDir tmp;
  write_file_atomic(tmp.path() / "k.csv", "grid,density_id,density_ood\n0,1,2\n0.5,x,1\n");
  try {
    plot::kde_svg(tmp.path() / "k.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("k.csv:3"), std::string::npos) << e.what();
  }
  write_file_atomic(tmp.path() / "k.csv", "grid,density\n");
  EXPECT_THROW(plot::kde_svg(tmp.path() / "k.csv"), DataError);
}

TEST_F(Cli, GenDataIsDeterministicAndGuarded) {
  luq::testing::TempDir other;
  write_file_atomic(other.path() / "small.json", kSmallConfig);
  ASSERT_EQ(run_cli(other.path(), "--config small.json gen-data --out data").code, 0);
  EXPECT_EQ(tree(other.path() / "data"), tree(root() / "data"));
  EXPECT_EQ(run_cli(other.path(), "--config small.json gen-data --out data").code, 1);
  write_file_atomic(other.path() / "data" / "train" / "stale.txt", "x");
  ASSERT_EQ(run_cli(other.path(), "--config small.json gen-data --out data --force").code, 0);
  EXPECT_FALSE(fs::exists(other.path() / "data" / "train" / "stale.txt"));
  EXPECT_EQ(tree(other.path() / "data"), tree(root() / "data"));
  const auto m = nlohmann::json::parse(read_file(root() / "data" / "ood" / "manifest.json"));
  EXPECT_EQ(m["generator_version"], "luq-synth/1");
  EXPECT_EQ(m["master_seed"], 5);
}

TEST_F(Cli, TrainWritesCheckpointAndVariantEcho) {
  EXPECT_TRUE(fs::exists(root() / "run" / "weights.bin"));
  EXPECT_TRUE(fs::exists(root() / "run" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(root() / "run" / "final" / "weights.json"));
  const auto r = run_cli(root(), "--config small.json train --data data --out skiprun --variant skip");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(read_file(root() / "skiprun" / "weights.json"));
  EXPECT_EQ(m["config"]["variant"], "skip");
  EXPECT_EQ(run_cli(root(), "--config small.json train --data nowhere --out x").code, 2);
  EXPECT_EQ(run_cli(root(), "--config small.json train --data data --variant fancy").code, 1);
}

TEST_F(Cli, PredictRecordsAndBounds) {
  ASSERT_EQ(run_cli(root(), "--config small.json predict --ckpt run --data data/test --n 2 --out a.jsonl").code, 0);
  ASSERT_EQ(run_cli(root(), "--config small.json predict --ckpt run --data data/test --n 2 --out b.jsonl").code, 0);
  EXPECT_EQ(read_file(root() / "a.jsonl"), read_file(root() / "b.jsonl"));
  const auto recs = read_records(root() / "a.jsonl");
  EXPECT_EQ(recs.size(), 10u);
  EXPECT_EQ(recs.front().id, "test_00000");
  EXPECT_EQ(run_cli(root(), "--config small.json predict --ckpt run --data data/test --n 1 --out c.jsonl").code, 1);
  EXPECT_FALSE(fs::exists(root() / "c.jsonl"));
  ASSERT_EQ(run_cli(root(), "--config small.json predict --ckpt run --data data/test --n 2 --out d.jsonl",
                    "LUQ_SEED=99").code, 0);
  EXPECT_NE(read_file(root() / "d.jsonl"), read_file(root() / "a.jsonl"));
  ASSERT_EQ(run_cli(root(), "--config small.json --seed 5 predict --ckpt run --data data/test --n 2 --out e.jsonl",
                    "LUQ_SEED=99").code, 0);
  EXPECT_EQ(read_file(root() / "e.jsonl"), read_file(root() / "a.jsonl"));
}

TEST_F(Cli, EvalCorruptionModes) {
  ASSERT_EQ(run_cli(root(), "--config small.json eval-corruption --ckpt run --data data --mode occlusion --out ec").code, 0);
  ASSERT_EQ(run_cli(root(), "--config small.json eval-corruption --ckpt run --data data --mode noise --out ec").code, 0);
  auto keys = [](const nlohmann::json& j) {
    std::vector<std::string> k;
    for (const auto& [name, v] : j.items()) k.push_back(name);
    return k;
  };
  EXPECT_EQ(keys(nlohmann::json::parse(read_file(root() / "ec" / "occlusion_summary.json"))),
            (std::vector<std::string>{"median_inside", "median_outside", "median_ratio", "mode", "n_images",
                                      "n_inside", "n_outside", "n_samples", "separability_auc"}));
  EXPECT_EQ(keys(nlohmann::json::parse(read_file(root() / "ec" / "noise_summary.json"))),
            (std::vector<std::string>{"latent_unc_mean", "levels", "mode", "n_images", "n_samples",
                                      "pred_score_mean", "spearman_latent", "spearman_pred"}));
  const std::string sweep = read_file(root() / "ec" / "noise_sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 7);
  EXPECT_EQ(run_cli(root(), "--config small.json eval-corruption --ckpt run --data data --mode blur").code, 1);
}

TEST_F(Cli, EvalOodMatrixAndSingleCategory) {
  ASSERT_EQ(run_cli(root(), "--config small.json eval-ood --ckpt run --id data --ood data/ood --out ood").code, 0);
  const auto j = nlohmann::json::parse(read_file(root() / "ood" / "ood_report.json"));
  EXPECT_EQ(j["predictive"].size(), 4u);
  EXPECT_EQ(j["iforest"].size(), 4u);
  EXPECT_TRUE(fs::exists(root() / "ood" / "kde_predictive.csv"));
  EXPECT_TRUE(fs::exists(root() / "ood" / "kde_iforest.csv"));
  ASSERT_EQ(run_cli(root(), "--config small.json eval-ood --ckpt run --id data --ood data/ood --out ood2").code, 0);
  EXPECT_EQ(tree(root() / "ood"), tree(root() / "ood2"));

  // Only the noise category.
  luq::testing::TempDir one;
  const auto split = read_split(root() / "data" / "ood");
  std::vector<Sample> noise;
  for (const auto& s : split.samples)
    if (s.label == OodLabel::ood_noise) noise.push_back(s);
  write_split(one.path() / "ood", split.manifest, noise);
  ASSERT_EQ(run_cli(root(), "--config small.json eval-ood --ckpt run --id data --ood " + one.path().string() +
                                "/ood --out ood3").code, 0);
  const auto k = nlohmann::json::parse(read_file(root() / "ood3" / "ood_report.json"));
  EXPECT_EQ(k["predictive"].size(), 1u);
  EXPECT_TRUE(k["predictive"].contains("ood_noise"));
  EXPECT_EQ(run_cli(root(), "--config small.json eval-ood --ckpt run --id data --ood missing").code, 2);
}

TEST_F(Cli, PlotKinds) {
  ASSERT_EQ(run_cli(root(), "--config small.json predict --ckpt run --data data/test --out p.jsonl").code, 0);
  ASSERT_EQ(run_cli(root(), "plot --in p.jsonl --in data/test/landmarks.csv --kind scatter --out s.svg").code, 0);
  const std::string svg = read_file(root() / "s.svg");
  std::size_t circles = 0;
  for (std::size_t p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++circles;
  EXPECT_EQ(circles, 10u * 64u);
  ASSERT_EQ(run_cli(root(), "plot --in p.jsonl --in data/test/landmarks.csv --kind scatter --out s2.svg").code, 0);
  EXPECT_EQ(read_file(root() / "s2.svg"), svg);

  ASSERT_EQ(run_cli(root(), "--config small.json eval-corruption --ckpt run --data data --mode noise --out pc").code, 0);
  EXPECT_EQ(run_cli(root(), "plot --in pc/noise_sweep.csv --kind sweep --out w.svg").code, 0);
  EXPECT_EQ(run_cli(root(), "plot --kind sweep --out w.svg").code, 1);
  write_file_atomic(root() / "empty.csv", "");
  EXPECT_EQ(run_cli(root(), "plot --in empty.csv --kind kde --out e.svg").code, 1);
  write_file_atomic(root() / "bad.csv", "grid,density_id,density_ood\n1,2,3\n1,2\n");
  const auto r = run_cli(root(), "plot --in bad.csv --kind kde --out e.svg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigHandling) {
  write_file_atomic(root() / "bad.json", R"({"train": {"epoch": 3}})");
  const auto r = run_cli(root(), "--config bad.json --print-config");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
  const auto p = run_cli(root(), "--config small.json --print-config", "LUQ_SEED=41");
  ASSERT_EQ(p.code, 0);
  EXPECT_EQ(nlohmann::json::parse(p.out)["seed"], 41);
  const auto q = run_cli(root(), "--config small.json --seed 8 --print-config", "LUQ_SEED=41");
  EXPECT_EQ(nlohmann::json::parse(q.out)["seed"], 8);
  EXPECT_EQ(run_cli(root(), "no-such-command").code, 1);
}
