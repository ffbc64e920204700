#include "luq/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "luq/errors.hpp"
#include "luq/io.hpp"

namespace luq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string encode_image(const Tensor& image) {
  const auto& s = image.shape();
  if (s.rank() != 3 || s[0] != 1) throw ShapeError("image must be [1 x H x W], got " + s.str());
  std::string out;
  out.reserve(16 + 4 * image.size());
  out.append(kImageMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(s[1]));
  put_u32(out, static_cast<std::uint32_t>(s[2]));
  put_u32(out, 0);
  for (float v : image.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_image(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kImageMagic, 4) != 0) throw DataError("bad image header");
  const auto h = static_cast<int>(get_u32(bytes, 4));
  const auto w = static_cast<int>(get_u32(bytes, 8));
  if (h <= 0 || w <= 0) throw DataError("bad image dimensions");
  const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  if (bytes.size() != 16 + 4 * n) throw DataError("image byte length does not match header");
  std::vector<float> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
  return Tensor(Shape{1, h, w}, std::move(px));
}

void write_split(const fs::path& dir, const SplitManifest& manifest, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  json topo = json::array();
  for (const auto& s : manifest.topology)
    topo.push_back({{"name", s.name}, {"node_count", s.node_count}, {"closed", s.closed}});
  json items = json::array();
  std::ostringstream csv;
  csv << "id,node_index,x,y,annotated,ood_label\n";
  for (const auto& s : samples) {
    items.push_back({{"id", s.id}, {"seed", s.seed}, {"ood_label", to_string(s.label)}});
    write_file_atomic(dir / (s.id + ".img"), encode_image(s.image));
    const int m = s.landmarks.shape()[0];
    for (int i = 0; i < m; ++i) {
      csv << s.id << ',' << i << ',' << format_float(s.landmarks.at(i, 0)) << ','
          << format_float(s.landmarks.at(i, 1)) << ',' << int{s.annotated[static_cast<std::size_t>(i)]} << ','
          << to_string(s.label) << '\n';
    }
  }
  const json doc = {{"split", manifest.split},
                    {"generator_version", manifest.generator_version},
                    {"master_seed", manifest.master_seed},
                    {"height", manifest.height},
                    {"width", manifest.width},
                    {"topology", topo},
                    {"samples", items}};
  write_file_atomic(dir / "landmarks.csv", csv.str());
  write_file_atomic(dir / "manifest.json", doc.dump(2) + "\n");
}

LoadedSplit read_split(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  LoadedSplit out;
  json doc;
  try {
    doc = json::parse(read_file(dir / "manifest.json"));
    out.manifest.split = doc.at("split").get<std::string>();
    out.manifest.generator_version = doc.at("generator_version").get<std::string>();
    out.manifest.master_seed = doc.at("master_seed").get<std::uint64_t>();
    out.manifest.height = doc.at("height").get<int>();
    out.manifest.width = doc.at("width").get<int>();
    for (const auto& t : doc.at("topology"))
      out.manifest.topology.push_back(
          {t.at("name").get<std::string>(), t.at("node_count").get<int>(), t.at("closed").get<bool>()});
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  }
  int m = 0;
  for (const auto& t : out.manifest.topology) m += t.node_count;

  std::map<std::string, std::size_t> index;
  for (const auto& item : doc.at("samples")) {
    Sample s;
    s.id = item.at("id").get<std::string>();
    s.seed = item.at("seed").get<std::uint64_t>();
    s.label = parse_ood_label(item.at("ood_label").get<std::string>());
    s.image = decode_image(read_file(dir / (s.id + ".img")));
    s.landmarks = Tensor(Shape{m, 2});
    s.annotated.assign(static_cast<std::size_t>(m), 0);
    index[s.id] = out.samples.size();
    out.samples.push_back(std::move(s));
  }

  std::istringstream csv(read_file(dir / "landmarks.csv"));
  std::string line;
  std::getline(csv, line);
  if (line.rfind("id,node_index,x,y,annotated,ood_label", 0) != 0) throw DataError("landmarks.csv: bad header");
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const auto where = [&] { return dir.string() + "/landmarks.csv:" + std::to_string(line_no); };
    if (f.size() != 6) throw DataError(where() + ": expected 6 fields");
    auto it = index.find(f[0]);
    if (it == index.end()) throw DataError(where() + ": unknown id " + f[0]);
    Sample& s = out.samples[it->second];
    try {
      const int node = std::stoi(f[1]);
      if (node < 0 || node >= m) throw DataError(where() + ": node index out of range");
      s.landmarks.at(node, 0) = std::stof(f[2]);
      s.landmarks.at(node, 1) = std::stof(f[3]);
      s.annotated[static_cast<std::size_t>(node)] = static_cast<std::uint8_t>(f[4] == "1");
    } catch (const std::logic_error&) {
      throw DataError(where() + ": malformed number");
    }
  }
  return out;
}

}  // namespace luq
