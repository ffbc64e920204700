#include "luq/model.hpp"

#include <bit>
#include <cmath>
#include <set>

#include "luq/errors.hpp"
#include "luq/io.hpp"

namespace luq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "luq-weights/1";

int hidden_layers(const ModelConfig& cfg) { return static_cast<int>(cfg.decoder_widths.size()) - 2; }

std::string stage(int i) { return "enc.conv" + std::to_string(i + 1); }
std::string gc_name(int i) { return "dec.gc" + std::to_string(i + 1); }

int down(int extent, int stages) {
  for (int s = 0; s < stages; ++s) extent = (extent + 1) / 2;
  return extent;
}

int flat_features(const ModelConfig& cfg) {
  const int s = static_cast<int>(cfg.encoder_widths.size());
  return cfg.encoder_widths.back() * down(cfg.image_height, s) * down(cfg.image_width, s);
}

Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-lim, lim));
  return t;
}

Var graph_layer(Tape& t, const BoundWeights& w, const std::string& name, const NormalizedAdjacency& adj, Var h) {
  return t.graph_conv(h, adj, w[name + ".w"], w[name + ".b"]);
}

// affine z -> M*F0, relu, reshaped per node.
Var initial_nodes(Tape& t, const BoundWeights& w, const ModelConfig& cfg, Var z) {
  const int n = t.value(z).shape()[0];
  Var h = t.relu(t.affine(z, w["dec.fc.w"], w["dec.fc.b"]));
  return t.reshape(h, Shape{n, cfg.node_count(), cfg.decoder_widths[0]});
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::plain ? "plain" : "skip"; }

Variant parse_variant(const std::string& s) {
  if (s == "plain") return Variant::plain;
  if (s == "skip") return Variant::skip;
  throw ConfigError("unknown variant '" + s + "' (expected plain or skip)");
}

int ModelConfig::node_count() const {
  int m = 0;
  for (const auto& s : topology) m += s.node_count;
  return m;
}

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (image_height < 1 || image_width < 1) throw ConfigError("image size must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd");
  if (encoder_widths.empty()) throw ConfigError("encoder_widths must not be empty");
  for (int c : encoder_widths)
    if (c < 1) throw ConfigError("encoder widths must be positive");
  if (decoder_widths.size() < 2 || decoder_widths.back() != 2)
    throw ConfigError("decoder_widths must end in 2 (x, y per node)");
  for (int c : decoder_widths)
    if (c < 1) throw ConfigError("decoder widths must be positive");
  if (topology.empty()) throw ConfigError("topology must list at least one structure");
  build_topology(topology);
  if (variant == Variant::skip) {
    if (hidden_layers(*this) < 1) throw ConfigError("skip variant needs at least one hidden graph layer");
    if (skip_after < 1 || skip_after > hidden_layers(*this))
      throw ConfigError("skip_after must be in [1, " + std::to_string(hidden_layers(*this)) + "]");
    if (skip_level < 1 || skip_level > static_cast<int>(encoder_widths.size()))
      throw ConfigError("skip_level must be in [1, " + std::to_string(encoder_widths.size()) + "]");
  }
}

json to_json(const ModelConfig& cfg) {
  json topo = json::array();
  for (const auto& s : cfg.topology) topo.push_back({{"name", s.name}, {"node_count", s.node_count}, {"closed", s.closed}});
  return {{"variant", to_string(cfg.variant)},
          {"latent_dim", cfg.latent_dim},
          {"image_height", cfg.image_height},
          {"image_width", cfg.image_width},
          {"kernel", cfg.kernel},
          {"encoder_widths", cfg.encoder_widths},
          {"decoder_widths", cfg.decoder_widths},
          {"skip_level", cfg.skip_level},
          {"skip_after", cfg.skip_after},
          {"topology", topo},
          {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{"variant",        "latent_dim", "image_height", "image_width",
                                           "kernel",         "encoder_widths", "decoder_widths", "skip_level",
                                           "skip_after",     "topology",   "init_seed"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown model config key '" + k + "'");
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("latent_dim")) c.latent_dim = j["latent_dim"].get<int>();
    if (j.contains("image_height")) c.image_height = j["image_height"].get<int>();
    if (j.contains("image_width")) c.image_width = j["image_width"].get<int>();
    if (j.contains("kernel")) c.kernel = j["kernel"].get<int>();
    if (j.contains("encoder_widths")) c.encoder_widths = j["encoder_widths"].get<std::vector<int>>();
    if (j.contains("decoder_widths")) c.decoder_widths = j["decoder_widths"].get<std::vector<int>>();
    if (j.contains("skip_level")) c.skip_level = j["skip_level"].get<int>();
    if (j.contains("skip_after")) c.skip_after = j["skip_after"].get<int>();
    if (j.contains("init_seed")) c.init_seed = j["init_seed"].get<std::uint64_t>();
    if (j.contains("topology")) {
      c.topology.clear();
      for (const auto& s : j["topology"]) {
        for (const auto& [k, v] : s.items())
          if (k != "name" && k != "node_count" && k != "closed") throw ConfigError("unknown topology key '" + k + "'");
        c.topology.push_back({s.at("name").get<std::string>(), s.at("node_count").get<int>(),
                              s.value("closed", true)});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------------ Weights

void Weights::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(value));
}

const Tensor& Weights::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return tensors_[it->second];
}

Tensor& Weights::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return tensors_[it->second];
}

std::size_t Weights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

Weights init_weights(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  Weights w;
  const int k = cfg.kernel;
  int cin = 1;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    const int co = cfg.encoder_widths[i];
    w.add(stage(static_cast<int>(i)) + ".w", glorot(Shape{co, cin, k, k}, cin * k * k, co * k * k, rng));
    w.add(stage(static_cast<int>(i)) + ".b", Tensor(Shape{co}, 0.0f));
    cin = co;
  }
  const int flat = flat_features(cfg);
  const int l = cfg.latent_dim;
  w.add("enc.mu.w", glorot(Shape{flat, l}, flat, l, rng));
  w.add("enc.mu.b", Tensor(Shape{l}, 0.0f));
  w.add("enc.logvar.w", glorot(Shape{flat, l}, flat, l, rng));
  w.add("enc.logvar.b", Tensor(Shape{l}, 0.0f));

  const int m = cfg.node_count();
  const auto& dw = cfg.decoder_widths;
  w.add("dec.fc.w", glorot(Shape{l, m * dw[0]}, l, m * dw[0], rng));
  w.add("dec.fc.b", Tensor(Shape{m * dw[0]}, 0.0f));
  const int hidden = hidden_layers(cfg);
  auto graph_params = [&](const std::string& name, int fin, int fout) {
    w.add(name + ".w", glorot(Shape{fin, fout}, fin, fout, rng));
    w.add(name + ".b", Tensor(Shape{fout}, 0.0f));
  };
  for (int i = 0; i < hidden; ++i) graph_params(gc_name(i), dw[i], dw[i + 1]);
  if (cfg.variant == Variant::skip) {
    const int wr = dw[cfg.skip_after];
    const int channels = cfg.encoder_widths[static_cast<std::size_t>(cfg.skip_level - 1)];
    graph_params("dec.readout", wr, 2);
    graph_params("dec.skip", wr + channels, wr);
  }
  graph_params("dec.out", dw[hidden], 2);
  return w;
}

Var BoundWeights::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("weights have no parameter " + name);
  return it->second;
}

BoundWeights bind(Tape& tape, const Weights& w, bool trainable) {
  BoundWeights b;
  for (std::size_t i = 0; i < w.size(); ++i) {
    Var v = trainable ? tape.variable(w.tensors()[i]) : tape.constant(w.tensors()[i]);
    b.vars[w.names()[i]] = v;
    b.ordered.push_back(v);
  }
  return b;
}

// ------------------------------------------------------------------ forward

Encoded encode(Tape& t, const BoundWeights& w, const ModelConfig& cfg, Var images) {
  Shape s = t.value(images).shape();
  if (s.rank() == 3) {
    images = t.reshape(images, Shape{1, s[0], s[1], s[2]});
    s = t.value(images).shape();
  }
  if (s.rank() != 4 || s[1] != 1 || s[2] != cfg.image_height || s[3] != cfg.image_width)
    throw ShapeError("encode: expected [N x 1 x " + std::to_string(cfg.image_height) + " x " +
                     std::to_string(cfg.image_width) + "], got " + s.str());
  Encoded e;
  Var x = images;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    const auto name = stage(static_cast<int>(i));
    x = t.relu(t.conv2d(x, w[name + ".w"], w[name + ".b"], 2));
    e.features.push_back(x);
  }
  Var flat = t.reshape(x, Shape{s[0], flat_features(cfg)});
  e.mu = t.affine(flat, w["enc.mu.w"], w["enc.mu.b"]);
  e.logvar = t.clamp(t.affine(flat, w["enc.logvar.w"], w["enc.logvar.b"]), kLogvarMin, kLogvarMax);
  return e;
}

Var reparameterize(Tape& t, Var mu, Var logvar, Var eps) {
  Var sigma = t.exp(t.scale(logvar, 0.5f));
  return t.add(mu, t.mul(sigma, eps));
}

Tensor draw_eps(int n, int latent_dim, Rng& rng) {
  Tensor e(Shape{n, latent_dim});
  for (auto& v : e.data()) v = rng.normal();
  return e;
}

Var decode_plain(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z) {
  Var h = initial_nodes(t, w, cfg, z);
  for (int i = 0; i < hidden_layers(cfg); ++i) h = t.relu(graph_layer(t, w, gc_name(i), adj, h));
  return graph_layer(t, w, "dec.out", adj, h);
}

SkipDecoded decode_skip(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z,
                        Var fmap) {
  SkipDecoded out;
  Var h = initial_nodes(t, w, cfg, z);
  for (int i = 0; i < cfg.skip_after; ++i) h = t.relu(graph_layer(t, w, gc_name(i), adj, h));
  out.intermediate = graph_layer(t, w, "dec.readout", adj, h);
  Var sampled = t.bilinear_sample(fmap, out.intermediate);
  h = t.relu(graph_layer(t, w, "dec.skip", adj, t.concat(h, sampled)));
  for (int i = cfg.skip_after; i < hidden_layers(cfg); ++i) h = t.relu(graph_layer(t, w, gc_name(i), adj, h));
  out.coords = graph_layer(t, w, "dec.out", adj, h);
  return out;
}

SkipDecoded decode(Tape& t, const BoundWeights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj, Var z,
                   const Encoded& enc) {
  if (cfg.variant == Variant::skip)
    return decode_skip(t, w, cfg, adj, z, enc.features[static_cast<std::size_t>(cfg.skip_level - 1)]);
  return {decode_plain(t, w, cfg, adj, z), Var{}};
}

// --------------------------------------------------------------- prediction

Tensor LatentDistribution::sigma() const {
  Tensor s = logvar;
  for (auto& v : s.data()) v = std::exp(v * 0.5f);
  return s;
}

PredictionEnsemble make_ensemble(Tensor samples) {
  const Shape& s = samples.shape();
  if (s.rank() != 3 || s[2] != 2) throw ShapeError("ensemble samples must be [n x M x 2]");
  if (s[0] < 2) throw ConfigError("an ensemble needs n >= 2 samples");
  PredictionEnsemble e;
  e.n = s[0];
  const int m = s[1];
  e.node_mean = Tensor(Shape{m, 2});
  e.node_std_xy = Tensor(Shape{m, 2});
  const std::size_t per = static_cast<std::size_t>(m) * 2;
  for (std::size_t j = 0; j < per; ++j) {
    double sum = 0.0;
    for (int i = 0; i < e.n; ++i) sum += samples[i * per + j];
    const double mean = sum / e.n;
    double ss = 0.0;
    for (int i = 0; i < e.n; ++i) {
      const double d = samples[i * per + j] - mean;
      ss += d * d;
    }
    e.node_mean[j] = static_cast<float>(mean);
    e.node_std_xy[j] = static_cast<float>(std::sqrt(ss / e.n));
  }
  e.samples = std::move(samples);
  return e;
}

Prediction sample_predictions(const Tensor& image, const Weights& w, const ModelConfig& cfg,
                              const NormalizedAdjacency& adj, int n, Rng& rng) {
  if (n < 2) throw ConfigError("sample_predictions needs n >= 2, got " + std::to_string(n));
  Tape t;
  const BoundWeights bw = bind(t, w, false);
  const Encoded enc = encode(t, bw, cfg, t.constant(image));
  Prediction p;
  p.latent.mu = t.value(enc.mu).reshaped(Shape{cfg.latent_dim});
  p.latent.logvar = t.value(enc.logvar).reshaped(Shape{cfg.latent_dim});

  const int l = cfg.latent_dim;
  Tensor mu_rep(Shape{n, l}), lv_rep(Shape{n, l});
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < l; ++d) {
      mu_rep[static_cast<std::size_t>(i) * l + d] = p.latent.mu[d];
      lv_rep[static_cast<std::size_t>(i) * l + d] = p.latent.logvar[d];
    }
  Var z = reparameterize(t, t.constant(mu_rep), t.constant(lv_rep), t.constant(draw_eps(n, l, rng)));
  p.ensemble = make_ensemble(t.value(decode(t, bw, cfg, adj, z, enc).coords));
  return p;
}

Tensor predict_mean(const Tensor& images, const Weights& w, const ModelConfig& cfg, const NormalizedAdjacency& adj) {
  Tape t;
  const BoundWeights bw = bind(t, w, false);
  const Encoded enc = encode(t, bw, cfg, t.constant(images));
  return t.value(decode(t, bw, cfg, adj, enc.mu, enc).coords);
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ContractError("stack_images: no images");
  const Shape& s = images.front()->shape();
  if (s.rank() != 3 || s[0] != 1) throw ShapeError("stack_images: images must be [1 x H x W]");
  Tensor out(Shape{static_cast<int>(images.size()), 1, s[1], s[2]});
  const std::size_t per = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i]->shape() == s)) throw ShapeError("stack_images: mixed image sizes");
    std::copy_n(images[i]->ptr(), per, out.ptr() + i * per);
  }
  return out;
}

// --------------------------------------------------------------- checkpoint

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  std::string bin;
  json params = json::array();
  for (std::size_t i = 0; i < ckpt.weights.size(); ++i) {
    const Tensor& t = ckpt.weights.tensors()[i];
    std::vector<int> shape;
    for (int a = 0; a < t.shape().rank(); ++a) shape.push_back(t.shape()[a]);
    params.push_back({{"name", ckpt.weights.names()[i]}, {"shape", shape}, {"offset", bin.size()}});
    for (float v : t.data()) put_u32(bin, std::bit_cast<std::uint32_t>(v));
  }
  const json doc = {{"format", kCheckpointFormat},
                    {"config", to_json(ckpt.config)},
                    {"seed", ckpt.seed},
                    {"step", ckpt.step},
                    {"total_bytes", bin.size()},
                    {"params", params}};
  write_file_atomic(dir / "weights.bin", bin);
  write_file_atomic(dir / "weights.json", doc.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  const fs::path manifest = fs::is_directory(path) ? path / "weights.json" : path;
  const fs::path bin_path = manifest.parent_path() / "weights.bin";
  if (!fs::exists(manifest)) throw DataError("checkpoint manifest not found: " + manifest.string());
  Checkpoint c;
  json doc;
  try {
    doc = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  const std::string bin = read_file(bin_path);
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat)
      throw DataError(manifest.string() + ": unsupported format");
    c.config = model_config_from_json(doc.at("config"));
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.step = doc.at("step").get<long>();
    const auto total = doc.at("total_bytes").get<std::size_t>();
    if (bin.size() != total)
      throw DataError(bin_path.string() + ": " + std::to_string(bin.size()) + " bytes, manifest says " +
                      std::to_string(total));
    for (const auto& p : doc.at("params")) {
      const auto dims = p.at("shape").get<std::vector<int>>();
      const auto offset = p.at("offset").get<std::size_t>();
      Tensor t{Shape(std::span<const int>(dims))};
      if (offset + 4 * t.size() > bin.size()) throw DataError(bin_path.string() + ": parameter runs past end");
      for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b)
          u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bin[offset + 4 * i + b])) << (8 * b);
        t[i] = std::bit_cast<float>(u);
      }
      if (!t.all_finite()) throw DataError(bin_path.string() + ": non-finite value in " + p.at("name").get<std::string>());
      c.weights.add(p.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  // Layout must match what this config builds.
  const Weights ref = init_weights(c.config);
  if (ref.names() != c.weights.names()) throw DataError(manifest.string() + ": parameter list does not match config");
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (!(ref.tensors()[i].shape() == c.weights.tensors()[i].shape()))
      throw DataError(manifest.string() + ": shape mismatch for " + ref.names()[i]);
  return c;
}

}  // namespace luq
