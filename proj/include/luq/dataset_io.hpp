#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "luq/graph.hpp"
#include "luq/synthdata.hpp"

namespace luq {

// On-disk split layout:
//   manifest.json   ids, seeds, labels, topology, generator version
//   <id>.img        "LUQI", u32 H, u32 W, u32 reserved, then H*W little-endian f32
//   landmarks.csv   id,node_index,x,y,annotated,ood_label
inline constexpr char kImageMagic[4] = {'L', 'U', 'Q', 'I'};

struct SplitManifest {
  std::string split;
  std::string generator_version = kGeneratorVersion;
  std::uint64_t master_seed = 0;
  int height = 0;
  int width = 0;
  std::vector<StructureSpec> topology;
};

std::string encode_image(const Tensor& image);
Tensor decode_image(std::string_view bytes);

void write_split(const std::filesystem::path& dir, const SplitManifest& manifest, const std::vector<Sample>& samples);

struct LoadedSplit {
  SplitManifest manifest;
  std::vector<Sample> samples;
};

// Samples come back in manifest order.
LoadedSplit read_split(const std::filesystem::path& dir);

}  // namespace luq
