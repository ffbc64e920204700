#include "luq/experiment.hpp"

#include <charconv>
#include <set>

#include "luq/errors.hpp"
#include "luq/io.hpp"

namespace luq {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json range(const std::array<double, 2>& r) { return json::array({r[0], r[1]}); }

}  // namespace

json to_json(const SynthConfig& cfg) {
  json structures = json::array();
  for (const auto& s : cfg.structures)
    structures.push_back({{"name", s.spec.name},
                          {"node_count", s.spec.node_count},
                          {"cx", range(s.cx)},
                          {"cy", range(s.cy)},
                          {"a", range(s.a)},
                          {"b", range(s.b)},
                          {"theta", range(s.theta)},
                          {"perturbation", s.perturbation},
                          {"intensity", s.intensity}});
  return {{"height", cfg.height},
          {"width", cfg.width},
          {"background", cfg.background},
          {"intensity_jitter", cfg.intensity_jitter},
          {"pixel_noise", cfg.pixel_noise},
          {"structures", structures}};
}

SynthConfig synth_config_from_json(const json& j) {
  reject_unknown(j, {"height", "width", "background", "intensity_jitter", "pixel_noise", "structures"}, "data.synth");
  SynthConfig c = default_synth_config();
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "background", c.background);
  read(j, "intensity_jitter", c.intensity_jitter);
  read(j, "pixel_noise", c.pixel_noise);
  if (j.contains("structures")) {
    c.structures.clear();
    for (const auto& s : j.at("structures")) {
      reject_unknown(s, {"name", "node_count", "cx", "cy", "a", "b", "theta", "perturbation", "intensity"},
                     "data.synth.structures[]");
      StructurePrior p;
      p.spec = {s.at("name").get<std::string>(), s.at("node_count").get<int>(), true};
      read(s, "cx", p.cx);
      read(s, "cy", p.cy);
      read(s, "a", p.a);
      read(s, "b", p.b);
      read(s, "theta", p.theta);
      read(s, "perturbation", p.perturbation);
      read(s, "intensity", p.intensity);
      c.structures.push_back(p);
    }
  }
  return c;
}

void ExperimentConfig::sync() {
  model.topology = data.synth.topology_spec();
  model.image_height = data.synth.height;
  model.image_width = data.synth.width;
  train.seed = seed;
}

void ExperimentConfig::validate() const {
  if (data.n_train < 1 || data.n_val < 1 || data.n_test < 1 || data.n_ood_per_category < 1)
    throw ConfigError("data split counts must be >= 1");
  if (data.synth.structures.empty()) throw ConfigError("data.synth needs at least one structure");
  model.validate();
  train.validate();
  if (predict_samples < 2) throw ConfigError("predict_samples must be >= 2");
  if (corruption.n_images < 1) throw ConfigError("corruption.n_images must be >= 1");
  if (corruption.n_samples < 2 || ood.n_samples < 2) throw ConfigError("sample counts must be >= 2");
  const auto& lv = corruption.noise_levels;
  for (std::size_t i = 0; i < lv.size(); ++i)
    if (lv[i] < 0.0 || (i > 0 && lv[i] <= lv[i - 1]))
      throw ConfigError("corruption.noise_levels must be non-negative and strictly increasing");
}

json to_json(const ExperimentConfig& cfg) {
  json model = to_json(cfg.model);
  model.erase("topology");
  model.erase("image_height");
  model.erase("image_width");
  json train = to_json(cfg.train);
  train.erase("seed");
  return {{"seed", cfg.seed},
          {"output_dir", cfg.output_dir},
          {"data",
           {{"n_train", cfg.data.n_train},
            {"n_val", cfg.data.n_val},
            {"n_test", cfg.data.n_test},
            {"n_ood_per_category", cfg.data.n_ood_per_category},
            {"synth", to_json(cfg.data.synth)}}},
          {"model", model},
          {"train", train},
          {"predict", {{"n_samples", cfg.predict_samples}}},
          {"corruption",
           {{"n_images", cfg.corruption.n_images},
            {"n_samples", cfg.corruption.n_samples},
            {"occlusion_side", cfg.corruption.occlusion_side},
            {"noise_levels", cfg.corruption.noise_levels}}},
          {"ood", {{"n_samples", cfg.ood.n_samples}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j, {"seed", "output_dir", "data", "model", "train", "predict", "corruption", "ood"}, "");
  ExperimentConfig c;
  try {
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"n_train", "n_val", "n_test", "n_ood_per_category", "synth"}, "data");
      read(d, "n_train", c.data.n_train);
      read(d, "n_val", c.data.n_val);
      read(d, "n_test", c.data.n_test);
      read(d, "n_ood_per_category", c.data.n_ood_per_category);
      if (d.contains("synth")) c.data.synth = synth_config_from_json(d["synth"]);
    }
    if (j.contains("model")) {
      for (const char* k : {"topology", "image_height", "image_width"})
        if (j["model"].contains(k))
          throw ConfigError(std::string("model.") + k + " is derived from data.synth; set it there");
      c.model = model_config_from_json(j["model"]);
    }
    if (j.contains("train")) {
      if (j["train"].contains("seed")) throw ConfigError("train.seed is derived from the top-level seed");
      c.train = train_config_from_json(j["train"]);
    }
    if (j.contains("predict")) {
      reject_unknown(j["predict"], {"n_samples"}, "predict");
      read(j["predict"], "n_samples", c.predict_samples);
    }
    if (j.contains("corruption")) {
      const auto& k = j["corruption"];
      reject_unknown(k, {"n_images", "n_samples", "occlusion_side", "noise_levels"}, "corruption");
      read(k, "n_images", c.corruption.n_images);
      read(k, "n_samples", c.corruption.n_samples);
      read(k, "occlusion_side", c.corruption.occlusion_side);
      read(k, "noise_levels", c.corruption.noise_levels);
    }
    if (j.contains("ood")) {
      reject_unknown(j["ood"], {"n_samples"}, "ood");
      read(j["ood"], "n_samples", c.ood.n_samples);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.sync();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (env && *env) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("LUQ_SEED is not an unsigned integer: " + std::string(s));
    return v;
  }
  return config_seed;
}

}  // namespace luq
