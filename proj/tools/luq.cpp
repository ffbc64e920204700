#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "luq/anomaly.hpp"
#include "luq/corrupt.hpp"
#include "luq/dataset_io.hpp"
#include "luq/errors.hpp"
#include "luq/experiment.hpp"
#include "luq/io.hpp"
#include "luq/plot.hpp"
#include "luq/train.hpp"
#include "luq/uncertainty.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace luq;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

ExperimentConfig effective_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_experiment_config(g.config_path);
  cfg.seed = resolve_seed(g.seed, std::getenv("LUQ_SEED"), cfg.seed);
  cfg.sync();
  return cfg;
}

fs::path out_or(const std::string& flag, const ExperimentConfig& cfg, const std::string& leaf) {
  return flag.empty() ? fs::path(cfg.output_dir) / leaf : fs::path(flag);
}

// A split directory, or a dataset root holding the named split.
fs::path split_dir(const fs::path& dir, const std::string& fallback) {
  if (fs::exists(dir / "manifest.json")) return dir;
  if (fs::exists(dir / fallback / "manifest.json")) return dir / fallback;
  throw DataError("no dataset split at " + dir.string() + " (expected manifest.json or " + fallback +
                  "/manifest.json; run gen-data first)");
}

void check_compatible(const LoadedSplit& data, const ModelConfig& m, const fs::path& dir) {
  if (data.manifest.height != m.image_height || data.manifest.width != m.image_width)
    throw DataError(dir.string() + ": images are " + std::to_string(data.manifest.height) + "x" +
                    std::to_string(data.manifest.width) + ", model expects " + std::to_string(m.image_height) + "x" +
                    std::to_string(m.image_width));
  int nodes = 0;
  for (const auto& s : data.manifest.topology) nodes += s.node_count;
  if (nodes != m.node_count())
    throw DataError(dir.string() + ": " + std::to_string(nodes) + " landmarks per image, model expects " +
                    std::to_string(m.node_count()));
}

std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- commands ----

int gen_data(const ExperimentConfig& cfg, const std::string& out_flag, bool force) {
  const fs::path out = out_or(out_flag, cfg, "data");
  const std::vector<std::string> entries{"train", "val", "test", "ood", "config.json"};
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw UsageError("output directory " + out.string() + " is not empty (use --force to overwrite)");
    for (const auto& e : entries) fs::remove_all(out / e);
  }
  const SynthConfig& synth = cfg.data.synth;
  const Dataset d = make_dataset(cfg.data.n_train, cfg.data.n_val, cfg.data.n_test, cfg.seed, synth);
  const auto ood = make_ood_set(cfg.data.n_ood_per_category, cfg.seed, synth);
  auto manifest = [&](const char* split) {
    return SplitManifest{split, kGeneratorVersion, cfg.seed, synth.height, synth.width, synth.topology_spec()};
  };
  write_split(out / "train", manifest("train"), d.train);
  write_split(out / "val", manifest("val"), d.val);
  write_split(out / "test", manifest("test"), d.test);
  write_split(out / "ood", manifest("ood"), ood);
  write_json(out / "config.json", to_json(cfg));
  std::cout << "wrote " << d.train.size() << "/" << d.val.size() << "/" << d.test.size() << " train/val/test and "
            << ood.size() << " OOD images to " << out.string() << "\n";
  return 0;
}

int train(ExperimentConfig cfg, const std::string& data_flag, const std::string& out_flag) {
  const fs::path data = data_flag.empty() ? fs::path(cfg.output_dir) / "data" : fs::path(data_flag);
  if (!fs::exists(data / "train" / "manifest.json") || !fs::exists(data / "val" / "manifest.json"))
    throw DataError("training data not found under " + data.string() + " (expected train/ and val/; run gen-data)");
  const LoadedSplit tr = read_split(data / "train");
  const LoadedSplit va = read_split(data / "val");
  // Image size and topology follow the data.
  cfg.model.topology = tr.manifest.topology;
  cfg.model.image_height = tr.manifest.height;
  cfg.model.image_width = tr.manifest.width;
  cfg.model.validate();
  const fs::path out = out_or(out_flag, cfg, to_string(cfg.model.variant));
  fs::create_directories(out);
  write_json(out / "config.json", to_json(cfg));
  const TrainResult r = train_loop(tr.samples, va.samples, cfg.model, cfg.train, out,
                                   [](const std::string& line) { std::cerr << line << "\n"; });
  std::cout << "trained " << to_string(cfg.model.variant) << " for " << r.steps << " steps; best validation error "
            << brief(r.best_val_error_px) << " px; checkpoint in " << out.string() << "\n";
  return 0;
}

int predict(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& data_flag, std::optional<int> n_flag,
            const std::string& out_flag) {
  const int n = n_flag.value_or(cfg.predict_samples);
  if (n < 2) throw UsageError("--n must be at least 2");
  const Checkpoint c = load_checkpoint(ckpt);
  const fs::path dir = split_dir(data_flag, "test");
  const LoadedSplit data = read_split(dir);
  check_compatible(data, c.config, dir);
  const auto adj = normalize_adjacency(build_topology(c.config.topology));
  std::vector<UncertaintyRecord> recs;
  for (const auto& s : data.samples) {
    Rng rng(derive_seed(cfg.seed, hash_string(s.id)));
    recs.push_back(make_record(s.id, sample_predictions(s.image, c.weights, c.config, adj, n, rng)));
  }
  const fs::path out = out_or(out_flag, cfg, "uncertainty.jsonl");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_records(out, recs);
  std::cout << "wrote " << recs.size() << " records to " << out.string() << "\n";
  return 0;
}

int eval_corruption(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& data_flag,
                    const std::string& mode, const std::string& out_flag) {
  const Checkpoint c = load_checkpoint(ckpt);
  const fs::path dir = split_dir(data_flag, "test");
  const LoadedSplit data = read_split(dir);
  check_compatible(data, c.config, dir);
  const auto adj = normalize_adjacency(build_topology(c.config.topology));
  const EvalModel model{c.weights, c.config, adj};
  const std::size_t count = std::min<std::size_t>(data.samples.size(), static_cast<std::size_t>(cfg.corruption.n_images));
  const std::vector<Sample> subset(data.samples.begin(), data.samples.begin() + static_cast<long>(count));
  const fs::path out = out_or(out_flag, cfg, "corruption");
  fs::create_directories(out);
  const int n = cfg.corruption.n_samples;
  if (mode == "occlusion") {
    const auto grid = quadrant_grid(c.config.image_height, c.config.image_width, cfg.corruption.occlusion_side);
    const auto r = occlusion_experiment(subset, model, n, grid, derive_seed(cfg.seed, hash_string("occlusion")));
    write_file_atomic(out / "occlusion_report.csv", occlusion_csv(r));
    std::optional<double> ratio;
    if (r.median_inside && r.median_outside && *r.median_outside > 0) ratio = *r.median_inside / *r.median_outside;
    write_json(out / "occlusion_summary.json", {{"mode", "occlusion"},
                                                {"n_images", count},
                                                {"n_samples", n},
                                                {"n_inside", r.inside.size()},
                                                {"n_outside", r.outside.size()},
                                                {"median_inside", optional_json(r.median_inside)},
                                                {"median_outside", optional_json(r.median_outside)},
                                                {"median_ratio", optional_json(ratio)},
                                                {"separability_auc", optional_json(r.separability_auc)}});
    std::cout << "occlusion: median inside/outside " << (ratio ? brief(*ratio) : "n/a") << ", AUC "
              << (r.separability_auc ? brief(*r.separability_auc) : "n/a") << "\n";
  } else {
    const auto s = noise_sweep(subset, model, cfg.corruption.noise_levels, n, derive_seed(cfg.seed, hash_string("noise")));
    write_file_atomic(out / "noise_sweep.csv", noise_sweep_csv(s));
    write_json(out / "noise_summary.json", {{"mode", "noise"},
                                            {"n_images", count},
                                            {"n_samples", n},
                                            {"levels", s.levels},
                                            {"latent_unc_mean", s.latent_unc_mean},
                                            {"pred_score_mean", s.pred_score_mean},
                                            {"spearman_latent", optional_json(s.spearman_latent)},
                                            {"spearman_pred", optional_json(s.spearman_pred)}});
    std::cout << "noise: spearman latent " << (s.spearman_latent ? brief(*s.spearman_latent) : "n/a")
              << ", predictive " << (s.spearman_pred ? brief(*s.spearman_pred) : "n/a") << "\n";
  }
  return 0;
}

int eval_ood(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& id_flag,
             const std::string& ood_flag, const std::string& out_flag) {
  const Checkpoint c = load_checkpoint(ckpt);
  std::vector<Sample> fit, held;
  const fs::path id_dir(id_flag);
  if (fs::exists(id_dir / "manifest.json")) {
    // One split: first half fits the forest, second half is held out.
    const LoadedSplit s = read_split(id_dir);
    check_compatible(s, c.config, id_dir);
    const std::size_t half = s.samples.size() / 2;
    fit.assign(s.samples.begin(), s.samples.begin() + static_cast<long>(half));
    held.assign(s.samples.begin() + static_cast<long>(half), s.samples.end());
  } else {
    const LoadedSplit tr = read_split(split_dir(id_dir, "train"));
    const LoadedSplit te = read_split(split_dir(id_dir, "test"));
    check_compatible(tr, c.config, id_dir);
    fit = tr.samples;
    held = te.samples;
  }
  const fs::path ood_dir = split_dir(ood_flag, "ood");
  const LoadedSplit ood = read_split(ood_dir);
  check_compatible(ood, c.config, ood_dir);
  if (fit.size() < 2 || held.size() < 2 || ood.samples.size() < 2)
    throw DataError("OOD evaluation needs at least 2 fit, 2 held-out ID and 2 OOD images");
  const auto adj = normalize_adjacency(build_topology(c.config.topology));
  const EvalModel model{c.weights, c.config, adj};
  const auto r = ood_experiment(fit, held, ood.samples, model, cfg.ood.n_samples, derive_seed(cfg.seed, hash_string("ood")));
  const fs::path out = out_or(out_flag, cfg, "ood");
  fs::create_directories(out);
  write_file_atomic(out / "ood_report.json", ood_report_json(r));
  json val = json::object();
  for (const auto& [trees, auc] : r.validation_auc) val[std::to_string(trees)] = auc;
  write_json(out / "ood_summary.json", {{"pooled_auc", {{"predictive", r.predictive.pooled_auc}, {"iforest", r.iforest.pooled_auc}}},
                                        {"selected_trees", r.selected_trees},
                                        {"validation_auc", val},
                                        {"n_fit", r.n_fit},
                                        {"n_id_test", r.n_id_test},
                                        {"n_ood_test", r.n_ood_test},
                                        {"n_samples", cfg.ood.n_samples}});
  write_file_atomic(out / "kde_predictive.csv", kde_csv(r.predictive));
  write_file_atomic(out / "kde_iforest.csv", kde_csv(r.iforest));
  std::cout << "pooled AUC: predictive " << brief(r.predictive.pooled_auc) << ", iforest "
            << brief(r.iforest.pooled_auc) << " (" << r.selected_trees << " trees)\n";
  return 0;
}

int plot_cmd(const std::vector<std::string>& inputs, const std::string& kind, const std::string& out) {
  if (inputs.empty()) throw UsageError("plot needs --in");
  for (const auto& in : inputs) {
    if (!fs::exists(in)) throw DataError("cannot open " + in);
    if (fs::file_size(in) == 0) throw UsageError(in + " is empty");
  }
  std::string svg;
  if (kind == "scatter") {
    if (inputs.size() != 2) throw UsageError("scatter needs --in uncertainty.jsonl --in landmarks.csv");
    svg = plot::scatter_svg(inputs[0], inputs[1]);
  } else {
    if (inputs.size() != 1) throw UsageError(kind + " takes exactly one --in");
    if (kind == "kde") svg = plot::kde_svg(inputs[0]);
    else if (kind == "box") svg = plot::box_svg(inputs[0]);
    else svg = plot::sweep_svg(inputs[0]);
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, svg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark segmentation uncertainty experiments on synthetic data"};
  app.fallthrough();
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed; overrides LUQ_SEED and the config");
  app.add_flag("--print-config", g.print_config, "Print the effective config and exit");

  std::string out, data, ckpt, mode, id, ood, kind, variant;
  bool force = false;
  std::optional<int> n;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "Generate train/val/test and OOD image sets");
  gen->add_option("--out", out, "Output directory");
  gen->add_flag("--force", force, "Overwrite an existing dataset");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", data, "Dataset root from gen-data");
  tr->add_option("--out", out, "Run directory");
  tr->add_option("--variant", variant, "Decoder variant")->check(CLI::IsMember({"plain", "skip"}));

  auto* pr = app.add_subcommand("predict", "Per-image uncertainty records as JSON lines");
  pr->add_option("--ckpt", ckpt, "Checkpoint directory or weights.json")->required();
  pr->add_option("--data", data, "Split directory (or dataset root: test split)")->required();
  pr->add_option("--n", n, "Posterior samples per image");
  pr->add_option("--out", out, "Output .jsonl");

  auto* ec = app.add_subcommand("eval-corruption", "Occlusion or noise experiment");
  ec->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ec->add_option("--data", data, "Split directory (or dataset root: test split)")->required();
  ec->add_option("--mode", mode, "occlusion or noise")->required()->check(CLI::IsMember({"occlusion", "noise"}));
  ec->add_option("--out", out, "Output directory");

  auto* eo = app.add_subcommand("eval-ood", "Out-of-distribution detection");
  eo->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eo->add_option("--id", id, "Dataset root (train fits, test is held out) or one ID split")->required();
  eo->add_option("--ood", ood, "OOD split (or dataset root: ood split)")->required();
  eo->add_option("--out", out, "Output directory");

  auto* pl = app.add_subcommand("plot", "Render a report as SVG");
  pl->add_option("--in", inputs, "Report file(s); scatter takes uncertainty.jsonl then landmarks.csv");
  pl->add_option("--kind", kind, "scatter, kde, box or sweep")->required()->check(CLI::IsMember({"scatter", "kde", "box", "sweep"}));
  pl->add_option("--out", out, "Output .svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig cfg = effective_config(g);
    if (!variant.empty()) cfg.model.variant = parse_variant(variant);
    if (g.print_config) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    if (*gen) return gen_data(cfg, out, force);
    if (*tr) return train(cfg, data, out);
    if (*pr) return predict(cfg, ckpt, data, n, out);
    if (*ec) return eval_corruption(cfg, ckpt, data, mode, out);
    if (*eo) return eval_ood(cfg, ckpt, id, ood, out);
    if (*pl) return plot_cmd(inputs, kind, out);
    std::cerr << app.help();
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "luq: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "luq: config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "luq: numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "luq: error: " << e.what() << "\n";
    return 2;
  }
}
