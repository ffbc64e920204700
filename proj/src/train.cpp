#include "luq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "luq/errors.hpp"
#include "luq/io.hpp"

namespace luq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kEvalBatch = 50;

struct Batch {
  Tensor images;
  Tensor targets;
  Tensor mask;
};

Batch make_batch(const std::vector<Sample>& data, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end) {
  std::vector<const Tensor*> imgs;
  for (std::size_t i = begin; i < end; ++i) imgs.push_back(&data[order[i]].image);
  const int n = static_cast<int>(end - begin);
  const int m = data[order[begin]].landmarks.shape()[0];
  Batch b{stack_images(imgs), Tensor(Shape{n, m, 2}), Tensor(Shape{n, m, 2})};
  for (int i = 0; i < n; ++i) {
    const Sample& s = data[order[begin + static_cast<std::size_t>(i)]];
    for (int j = 0; j < m; ++j) {
      const std::size_t at = (static_cast<std::size_t>(i) * m + j) * 2;
      b.targets[at] = s.landmarks.at(j, 0);
      b.targets[at + 1] = s.landmarks.at(j, 1);
      const float f = s.annotated[static_cast<std::size_t>(j)] ? 1.0f : 0.0f;
      b.mask[at] = f;
      b.mask[at + 1] = f;
    }
  }
  return b;
}

struct EvalResult {
  double mse = 0.0;
  double kl = 0.0;
  double error_px = 0.0;
};

EvalResult evaluate(const std::vector<Sample>& data, const Weights& w, const ModelConfig& cfg,
                    const NormalizedAdjacency& adj) {
  EvalResult r;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double err_sum = 0.0, sq_sum = 0.0, kl_sum = 0.0, count = 0.0, nodes = 0.0;
  for (std::size_t b = 0; b < data.size(); b += kEvalBatch) {
    const std::size_t e = std::min(data.size(), b + kEvalBatch);
    const Batch batch = make_batch(data, order, b, e);
    Tape t;
    const BoundWeights bw = bind(t, w, false);
    const Encoded enc = encode(t, bw, cfg, t.constant(batch.images));
    const Tensor pred = t.value(decode(t, bw, cfg, adj, enc.mu, enc).coords);
    const int n = static_cast<int>(e - b);
    err_sum += mean_landmark_error_px(pred, batch.targets, cfg.image_height, cfg.image_width) * n;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - batch.targets[i];
      sq_sum += batch.mask[i] * d * d;
      nodes += batch.mask[i];
    }
    const Tensor& mu = t.value(enc.mu);
    const Tensor& lv = t.value(enc.logvar);
    for (std::size_t i = 0; i < mu.size(); ++i)
      kl_sum += 0.5 * (static_cast<double>(mu[i]) * mu[i] + std::exp(static_cast<double>(lv[i])) - lv[i] - 1.0);
    count += n;
  }
  r.error_px = err_sum / count;
  r.mse = nodes > 0 ? sq_sum / nodes : 0.0;
  r.kl = kl_sum / count;
  return r;
}

std::string csv_row(long step, const char* split, double mse, double kl, double beta, const std::string& val) {
  return std::to_string(step) + "," + split + "," + format_double(mse) + "," + format_double(kl) + "," +
         format_double(beta) + "," + val + "\n";
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must be in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
  if (!(kl_start > 0 && kl_start <= kl_end)) throw ConfigError("need 0 < kl_start <= kl_end");
  if (!(kl_warmup_fraction > 0 && kl_warmup_fraction <= 1)) throw ConfigError("kl_warmup_fraction must be in (0, 1]");
  if (!(recon_weight > 0)) throw ConfigError("recon_weight must be > 0");
  if (!(readout_weight >= 0)) throw ConfigError("readout_weight must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"kl_start", c.kl_start},
          {"kl_end", c.kl_end},
          {"kl_warmup_fraction", c.kl_warmup_fraction},
          {"recon_weight", c.recon_weight},
          {"readout_weight", c.readout_weight},
          {"max_steps", c.max_steps},
          {"log_every", c.log_every},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!defaults.contains(k)) throw ConfigError("unknown train config key '" + k + "'");
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.kl_start = j.value("kl_start", c.kl_start);
    c.kl_end = j.value("kl_end", c.kl_end);
    c.kl_warmup_fraction = j.value("kl_warmup_fraction", c.kl_warmup_fraction);
    c.recon_weight = j.value("recon_weight", c.recon_weight);
    c.readout_weight = j.value("readout_weight", c.readout_weight);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double masked_mse(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask) {
  if (!(pred.shape() == target.shape())) throw ShapeError("masked_mse: pred and target shapes differ");
  const std::size_t nodes = pred.size() / 2;
  if (mask.empty() || nodes % mask.size() != 0) throw ShapeError("masked_mse: mask length does not match nodes");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nodes; ++i) {
    if (!mask[i % mask.size()]) continue;
    for (int c = 0; c < 2; ++c) {
      const double d = static_cast<double>(pred[2 * i + c]) - target[2 * i + c];
      sum += d * d;
    }
    count += 2;
  }
  if (count == 0) throw ContractError("masked_mse: no annotated nodes");
  return sum / static_cast<double>(count);
}

Var masked_mse(Tape& t, Var pred, const Tensor& target, const Tensor& mask) {
  double count = 0.0;
  for (float v : mask.data()) count += v;
  if (count == 0.0) throw ContractError("masked_mse: no annotated nodes");
  Var d = t.sub(pred, t.constant(target));
  Var sq = t.mul(t.mul(d, d), t.constant(mask));
  return t.scale(t.sum(sq), static_cast<float>(1.0 / count));
}

double kl_divergence(const LatentDistribution& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.mu.size(); ++i) {
    const double mu = d.mu[i], lv = d.logvar[i];
    s += mu * mu + std::exp(lv) - lv - 1.0;
  }
  return 0.5 * s;
}

Var kl_divergence(Tape& t, Var mu, Var logvar) {
  const int n = t.value(mu).shape().rank() == 2 ? t.value(mu).shape()[0] : 1;
  Var terms = t.sub(t.add(t.mul(mu, mu), t.exp(logvar)), logvar);
  Var s = t.add_scalar(t.scale(t.sum(terms), 1.0f / static_cast<float>(n)),
                       -static_cast<float>(t.value(mu).size() / static_cast<std::size_t>(n)));
  return t.scale(s, 0.5f);
}

double kl_weight(long step, long total_steps, const TrainConfig& cfg) {
  if (step < 0 || total_steps < 0 || step > total_steps)
    throw ContractError("kl_weight: need 0 <= step <= total_steps");
  const double warm = cfg.kl_warmup_fraction * static_cast<double>(total_steps);
  const double f = warm > 0.0 ? std::min(1.0, static_cast<double>(step) / warm) : 1.0;
  const double a = std::log(cfg.kl_start), b = std::log(cfg.kl_end);
  if (f >= 1.0) return cfg.kl_end;
  return std::exp(a + (b - a) * f);
}

AdamState adam_init(const Weights& w) {
  AdamState s;
  for (const auto& t : w.tensors()) {
    s.m.emplace_back(t.shape(), 0.0f);
    s.v.emplace_back(t.shape(), 0.0f);
  }
  return s;
}

void adam_step(Weights& w, const std::vector<Tensor>& grads, AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != w.size() || state.m.size() != w.size()) throw ContractError("adam_step: parameter count mismatch");
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (!(grads[p].shape() == w.tensors()[p].shape())) throw ShapeError("adam_step: gradient shape for " + w.names()[p]);
    if (!grads[p].all_finite()) throw NumericError("non-finite gradient for parameter " + w.names()[p]);
  }
  ++state.t;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto x = w.tensors()[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    const auto g = grads[p].data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon);
      x[i] = static_cast<float>(x[i] - step);
    }
  }
}

double mean_landmark_error_px(const Tensor& pred, const Tensor& target, int height, int width) {
  if (!(pred.shape() == target.shape())) throw ShapeError("landmark error: shapes differ");
  const std::size_t nodes = pred.size() / 2;
  double s = 0.0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double dx = (static_cast<double>(pred[2 * i]) - target[2 * i]) * (width - 1);
    const double dy = (static_cast<double>(pred[2 * i + 1]) - target[2 * i + 1]) * (height - 1);
    s += std::sqrt(dx * dx + dy * dy);
  }
  return s / static_cast<double>(nodes);
}

TrainResult train_loop(const std::vector<Sample>& train, const std::vector<Sample>& val, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, const fs::path& out_dir, const ProgressFn& progress) {
  cfg.validate();
  model_cfg.validate();
  if (train.empty()) throw DataError("training split is empty");
  const int m = model_cfg.node_count();
  for (const auto* split : {&train, &val})
    for (const auto& s : *split) {
      if (s.landmarks.shape()[0] != m) throw DataError(s.id + ": landmark count does not match topology");
      if (s.image.shape()[1] != model_cfg.image_height || s.image.shape()[2] != model_cfg.image_width)
        throw DataError(s.id + ": image size does not match model config");
    }

  const auto adj = normalize_adjacency(build_topology(model_cfg.topology));
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(train.size()));
  const long per_epoch = static_cast<long>(train.size()) / batch;
  const long total = cfg.max_steps > 0 ? cfg.max_steps : per_epoch * cfg.epochs;

  TrainResult result;
  Checkpoint current{model_cfg, init_weights(model_cfg), cfg.seed, 0};
  AdamState adam = adam_init(current.weights);
  Rng rng(derive_seed(cfg.seed, 0x7472616eULL));
  std::ostringstream csv;
  csv << "step,split,mse,kl,beta,val_mean_landmark_error_px\n";
  result.best_val_error_px = std::numeric_limits<double>::infinity();

  auto validate_now = [&](long step, double beta) {
    if (val.empty()) return;
    const EvalResult e = evaluate(val, current.weights, model_cfg, adj);
    csv << csv_row(step, "val", e.mse, e.kl, beta, format_double(e.error_px));
    if (e.error_px < result.best_val_error_px) {
      result.best_val_error_px = e.error_px;
      result.best = current;
    }
    if (progress)
      progress("step " + std::to_string(step) + "/" + std::to_string(total) + " val error " +
               format_double(std::round(e.error_px * 1000) / 1000) + " px");
  };

  auto write_outputs = [&] {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "metrics.csv", csv.str());
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  Weights last_good = current.weights;
  long good_step = 0;
  double beta = kl_weight(0, total, cfg);
  try {
    while (step < total) {
      // Fisher-Yates with the run's own stream.
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
      for (long b = 0; b < per_epoch && step < total; ++b) {
        const Batch data = make_batch(train, order, static_cast<std::size_t>(b * batch),
                                      static_cast<std::size_t>((b + 1) * batch));
        beta = kl_weight(step, total, cfg);
        last_good = current.weights;
        good_step = step;
        Tape t;
        const BoundWeights bw = bind(t, current.weights, true);
        const Encoded enc = encode(t, bw, model_cfg, t.constant(data.images));
        Var eps = t.constant(draw_eps(batch, model_cfg.latent_dim, rng));
        Var z = reparameterize(t, enc.mu, enc.logvar, eps);
        const SkipDecoded dec = decode(t, bw, model_cfg, adj, z, enc);
        Var mse = masked_mse(t, dec.coords, data.targets, data.mask);
        Var kl = kl_divergence(t, enc.mu, enc.logvar);
        Var recon = mse;
        if (dec.intermediate.valid() && cfg.readout_weight > 0)
          recon = t.add(recon, t.scale(masked_mse(t, dec.intermediate, data.targets, data.mask),
                                       static_cast<float>(cfg.readout_weight)));
        Var loss = t.add(t.scale(recon, static_cast<float>(cfg.recon_weight)), t.scale(kl, static_cast<float>(beta)));
        if (!std::isfinite(t.value(loss).item())) throw NumericError("loss is not finite");
        t.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : bw.ordered) grads.push_back(t.grad(v));
        adam_step(current.weights, grads, adam, cfg);
        ++step;
        current.step = step;
        if (step % cfg.log_every == 0 || step == total)
          csv << csv_row(step, "train", t.value(mse).item(), t.value(kl).item(), beta, "");
      }
      // Weights that fail validation are not good either.
      beta = kl_weight(step, total, cfg);
      validate_now(step, beta);
    }
  } catch (const NumericError& e) {
    csv << csv_row(step, "abort", std::nan(""), std::nan(""), beta, "");
    write_outputs();
    if (!out_dir.empty()) save_checkpoint(out_dir / "last_good", {model_cfg, last_good, cfg.seed, good_step});
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
  }
  if (val.empty()) result.best = current;
  result.final = current;
  result.steps = step;
  result.metrics_csv = csv.str();
  if (!out_dir.empty()) {
    write_outputs();
    save_checkpoint(out_dir, result.best);
    save_checkpoint(out_dir / "final", result.final);
  }
  return result;
}

}  // namespace luq
