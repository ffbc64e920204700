#include <gtest/gtest.h>

#include <filesystem>

#include "luq/dataset_io.hpp"
#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "support/tempdir.hpp"

using namespace luq;
namespace fs = std::filesystem;

namespace {

SplitManifest manifest_for(const SynthConfig& cfg, const std::string& split) {
  SplitManifest m;
  m.split = split;
  m.master_seed = 7;
  m.height = cfg.height;
  m.width = cfg.width;
  m.topology = cfg.topology_spec();
  return m;
}

}  // namespace

TEST(ImageCodec, HeaderAndRoundTrip) {
  Tensor img(Shape{1, 2, 3}, {0.0f, 0.25f, -1.5f, 1e-30f, 0.7f, 1.0f});
  const std::string bytes = encode_image(img);
  ASSERT_EQ(bytes.size(), 16u + 24u);
  EXPECT_EQ(bytes.substr(0, 4), "LUQI");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);
  // 0.25f = 0x3e800000, little-endian.
  EXPECT_EQ(static_cast<unsigned char>(bytes[20 + 3]), 0x3e);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20 + 2]), 0x80);
  const Tensor back = decode_image(bytes);
  EXPECT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], img[i]);
  EXPECT_THROW(decode_image(bytes.substr(0, 30)), DataError);
  EXPECT_THROW(decode_image("XXXX" + bytes.substr(4)), DataError);
}

TEST(SplitIo, RoundTripAndByteStable) {
  luq::testing::TempDir tmp;
  const auto cfg = default_synth_config();
  const Dataset d = make_dataset(4, 1, 1, 7, cfg);
  auto ood = make_ood_set(1, 7, cfg);
  write_split(tmp.path() / "a", manifest_for(cfg, "train"), d.train);
  write_split(tmp.path() / "b", manifest_for(cfg, "train"), d.train);
  write_split(tmp.path() / "ood", manifest_for(cfg, "ood"), ood);
  for (const auto& e : fs::directory_iterator(tmp.path() / "a"))
    EXPECT_EQ(read_file(e.path()), read_file(tmp.path() / "b" / e.path().filename())) << e.path();

  const LoadedSplit back = read_split(tmp.path() / "a");
  EXPECT_EQ(back.manifest.split, "train");
  EXPECT_EQ(back.manifest.generator_version, kGeneratorVersion);
  EXPECT_EQ(back.manifest.topology.size(), 3u);
  ASSERT_EQ(back.samples.size(), d.train.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, d.train[i].id);
    EXPECT_EQ(back.samples[i].seed, d.train[i].seed);
    for (std::size_t j = 0; j < d.train[i].landmarks.size(); ++j)
      ASSERT_EQ(back.samples[i].landmarks[j], d.train[i].landmarks[j]);
    for (std::size_t j = 0; j < d.train[i].image.size(); ++j) ASSERT_EQ(back.samples[i].image[j], d.train[i].image[j]);
    EXPECT_EQ(back.samples[i].annotated, d.train[i].annotated);
  }
  const LoadedSplit o = read_split(tmp.path() / "ood");
  for (std::size_t i = 0; i < o.samples.size(); ++i) {
    EXPECT_EQ(o.samples[i].label, ood[i].label);
    for (auto a : o.samples[i].annotated) EXPECT_EQ(a, 0);
  }
}

TEST(SplitIo, DiagnosticsNameTheLine) {
  luq::testing::TempDir tmp;
  const auto cfg = default_synth_config();
  const Dataset d = make_dataset(2, 1, 1, 7, cfg);
  write_split(tmp.path(), manifest_for(cfg, "train"), d.train);
  std::string csv = read_file(tmp.path() / "landmarks.csv");
  csv += "train_00000,3,abc,0.5,1,in_distribution\n";
  write_file_atomic(tmp.path() / "landmarks.csv", csv);
  try {
    read_split(tmp.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("landmarks.csv:130"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_split(tmp.path() / "missing"), DataError);
}
