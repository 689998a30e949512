#ifndef FLDM_TRAIN_HPP
#define FLDM_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fldm/config.hpp"
#include "fldm/data.hpp"
#include "fldm/model.hpp"
#include "fldm/model_io.hpp"
#include "fldm/ops.hpp"

namespace fldm {

// ---------------------------------------------------------------------------
// Loss and metrics

/// mean((pred - truth)^2) over every entry.
inline Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs truth " +
                     shape_str(truth.shape()));
  }
  const auto pv = pred.values(), tv = truth.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const double n = static_cast<double>(pv.size());
  Tensor result = Tensor::scalar(acc / n);
  if (Graph* g = detail::recording_graph({&pred, &truth})) {
    g->record("mse_loss", {pred.impl(), truth.impl()}, {result.impl()},
              [pi = pred.impl(), ti = truth.impl(), oi = result.impl(), n]() {
                if (pi->requires_grad) pi->ensure_grad();
                if (ti->requires_grad) ti->ensure_grad();
                const double go = oi->grad[0];
                for (std::size_t i = 0; i < pi->values.size(); ++i) {
                  const double d = 2.0 * (pi->values[i] - ti->values[i]) / n * go;
                  if (pi->requires_grad) pi->grad[i] += d;
                  if (ti->requires_grad) ti->grad[i] -= d;
                }
              });
  }
  return result;
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> pearson;  // undefined when either side is constant
  std::size_t count = 0;
};

/// Streaming mse / mae / Pearson with centred co-moments.
class MetricsAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> truth) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double p = pred[i], t = truth[i], d = p - t;
      sq_ += d * d;
      abs_ += std::abs(d);
      ++n_;
      const double dp = p - mean_p_;
      mean_p_ += dp / static_cast<double>(n_);
      const double dt = t - mean_t_;
      mean_t_ += dt / static_cast<double>(n_);
      m2p_ += dp * (p - mean_p_);
      m2t_ += dt * (t - mean_t_);
      cpt_ += dp * (t - mean_t_);
    }
  }

  Metrics finish() const {
    Metrics m;
    m.count = n_;
    if (n_ == 0) return m;
    m.mse = sq_ / static_cast<double>(n_);
    m.mae = abs_ / static_cast<double>(n_);
    if (m2p_ > 0 && m2t_ > 0) m.pearson = std::clamp(cpt_ / std::sqrt(m2p_ * m2t_), -1.0, 1.0);
    return m;
  }

 private:
  double sq_ = 0, abs_ = 0, mean_p_ = 0, mean_t_ = 0, m2p_ = 0, m2t_ = 0, cpt_ = 0;
  std::size_t n_ = 0;
};

inline Metrics metrics(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) throw ShapeError("metrics: shape mismatch");
  MetricsAccumulator acc;
  acc.add(pred.values(), truth.values());
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Optimiser

struct AdamConfig {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;  // global gradient norm; <= 0 disables clipping
};

/// Adam with bias correction. Gradients are clipped by global norm before
/// the moment updates; a non-finite gradient skips the whole step.
class Adam {
 public:
  Adam(const ParameterList& params, AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("adam: learning rate must be positive");
    for (const auto& [name, t] : params) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  /// Returns false when the step was skipped.
  bool step(ParameterList& params) {
    if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed size");
    double norm2 = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor& t = params[p].second;
      if (t.numel() != m_[p].size()) throw ShapeError("adam: parameter " + params[p].first + " changed shape");
      for (double g : t.grad()) norm2 += g * g;
    }
    if (!std::isfinite(norm2)) {
      ++skipped_;
      warn("adam: non-finite gradient, step skipped");
      return false;
    }
    const double norm = std::sqrt(norm2);
    last_norm_ = norm;
    const double factor = (cfg_.clip > 0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& t = params[p].second;
      const auto grad = t.grad();
      auto w = t.data();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i] * factor;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
    return true;
  }

  std::size_t steps() const { return t_; }
  std::size_t skipped() const { return skipped_; }
  double last_grad_norm() const { return last_norm_; }
  const std::vector<double>& first_moment(std::size_t p) const { return m_.at(p); }
  const std::vector<double>& second_moment(std::size_t p) const { return v_.at(p); }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
  double last_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string csv;             // empty: use the synthetic generator
  bool date_col = true;
  SplitProtocol split = SplitProtocol::ratio;
  std::size_t stride = 1;      // train window stride
  std::size_t eval_stride = 1; // val/test window stride
  SynthSpec synth;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  std::size_t patience = 3;
  std::size_t max_batches = 0;  // per epoch; 0 = all
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  std::string out_dir;  // empty: no files written

  void validate() const {
    if (!(adam.lr > 0)) throw ConfigError("train.lr must be positive");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    model.validate();
  }

  /// Canonical key = value listing of every effective setting.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "train.lr=" << adam.lr << "\ntrain.beta1=" << adam.beta1 << "\ntrain.beta2=" << adam.beta2
       << "\ntrain.eps=" << adam.eps << "\ntrain.clip=" << adam.clip << "\ntrain.batch=" << batch
       << "\ntrain.epochs=" << epochs << "\ntrain.patience=" << patience
       << "\ntrain.max_batches=" << max_batches << "\ntrain.seed=" << seed
       << "\nmodel.lookback=" << model.lookback << "\nmodel.horizon=" << model.horizon
       << "\nmodel.variates=" << model.variates << "\nmodel.hidden=" << model.hidden
       << "\nmodel.blocks=" << model.blocks << "\nssm.state_dim=" << model.state_dim
       << "\nssm.dt_min=" << model.dt_min << "\nssm.dt_max=" << model.dt_max
       << "\nssm.discretization=" << discretization_name(model.discretization)
       << "\nssm.scan=" << (model.scan == ScanMode::sequential ? "sequential" : "chunked")
       << "\nilt.modes=" << model.ilt_modes << "\nrbf.bandwidth=" << model.rbf.bandwidth
       << "\nrbf.radius=" << model.rbf.radius << "\nablation.use_rbf=" << model.use_rbf
       << "\nablation.use_fmamba=" << model.use_fmamba << "\nablation.use_mamba=" << model.use_mamba
       << "\nablation.use_ft=" << model.use_ft << "\nablation.use_ilt=" << model.use_ilt
       << "\nfmamba.filter_init=" << (model.random_filter_init ? "random" : "identity")
       << "\nfmamba.per_variate=" << model.per_variate_filter << "\ndata.csv=" << data.csv
       << "\ndata.date_col=" << data.date_col << "\ndata.stride=" << data.stride
       << "\ndata.eval_stride=" << data.eval_stride << '\n';
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }
};

inline TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.adam.lr = c.get_double("train.lr", t.adam.lr);
  t.adam.beta1 = c.get_double("train.beta1", t.adam.beta1);
  t.adam.beta2 = c.get_double("train.beta2", t.adam.beta2);
  t.adam.eps = c.get_double("train.eps", t.adam.eps);
  t.adam.clip = c.get_double("train.clip", t.adam.clip);
  t.batch = c.get_uint("train.batch", t.batch);
  t.epochs = c.get_uint("train.epochs", t.epochs);
  t.patience = c.get_uint("train.patience", t.patience);
  t.max_batches = c.get_uint("train.max_batches", t.max_batches);
  t.seed = c.get_uint("train.seed", t.seed);
  t.out_dir = c.get_string("train.out", t.out_dir);

  auto& m = t.model;
  m.lookback = c.get_uint("model.lookback", m.lookback);
  m.horizon = c.get_uint("model.horizon", m.horizon);
  m.variates = c.get_uint("model.variates", m.variates);
  m.hidden = c.get_uint("model.hidden", m.hidden);
  m.blocks = c.get_uint("model.blocks", m.blocks);
  m.state_dim = c.get_uint("ssm.state_dim", m.state_dim);
  m.dt_min = c.get_double("ssm.dt_min", m.dt_min);
  m.dt_max = c.get_double("ssm.dt_max", m.dt_max);
  m.discretization = parse_discretization(c.get_string("ssm.discretization", "zoh"));
  const auto scan = c.get_string("ssm.scan", "sequential");
  if (scan != "sequential" && scan != "chunked") throw ConfigError("ssm.scan must be sequential or chunked");
  m.scan = scan == "sequential" ? ScanMode::sequential : ScanMode::chunked;
  m.ilt_modes = c.get_uint("ilt.modes", m.ilt_modes);
  m.rbf.bandwidth = c.get_double("rbf.bandwidth", m.rbf.bandwidth);
  m.rbf.radius = c.get_uint("rbf.radius", m.rbf.radius);
  m.use_rbf = c.get_bool("rbf.enabled", m.use_rbf);
  m.use_rbf = c.get_bool("ablation.use_rbf", m.use_rbf);
  m.use_fmamba = c.get_bool("ablation.use_fmamba", m.use_fmamba);
  m.use_mamba = c.get_bool("ablation.use_mamba", m.use_mamba);
  m.use_ft = c.get_bool("ablation.use_ft", m.use_ft);
  m.use_ilt = c.get_bool("ablation.use_ilt", m.use_ilt);
  const auto init = c.get_string("fmamba.filter_init", "identity");
  if (init != "identity" && init != "random") throw ConfigError("fmamba.filter_init must be identity or random");
  m.random_filter_init = init == "random";
  m.per_variate_filter = c.get_bool("fmamba.per_variate", m.per_variate_filter);

  auto& d = t.data;
  d.csv = c.get_string("data.csv", d.csv);
  d.date_col = c.get_bool("data.date_col", d.date_col);
  d.split = parse_split_protocol(c.get_string("data.split", "ratio"));
  d.stride = c.get_uint("data.stride", d.stride);
  d.eval_stride = c.get_uint("data.eval_stride", d.eval_stride);
  auto& s = d.synth;
  s.length = c.get_uint("synth.length", s.length);
  s.periods = c.get_doubles("synth.periods", s.periods);
  s.period_amps = c.get_doubles("synth.period_amps", s.period_amps);
  s.burst_rate = c.get_double("synth.burst_rate", s.burst_rate);
  s.burst_decay = c.get_double("synth.burst_decay", s.burst_decay);
  s.burst_amp = c.get_double("synth.burst_amp", s.burst_amp);
  s.noise_std = c.get_double("synth.noise_std", s.noise_std);
  s.variates = c.get_uint("synth.variates", s.variates);
  s.seed = c.get_uint("synth.seed", s.seed);

  for (const auto& k : c.unused_keys()) warn("unknown config key '" + k + "' ignored");
  t.validate();
  s.validate();
  return t;
}

/// Reads a config file; a relative data.csv is taken relative to the file.
inline TrainConfig load_train_config(const std::string& path) {
  TrainConfig t = train_config_from(Config::load(path));
  if (!t.data.csv.empty() && std::filesystem::path(t.data.csv).is_relative()) {
    t.data.csv = (std::filesystem::path(path).parent_path() / t.data.csv).lexically_normal().string();
  }
  return t;
}

/// Loads (or generates) the dataset, assigns splits and normalises it. The
/// model's variate count follows the data.
inline SeriesDataset load_dataset(TrainConfig& cfg) {
  SeriesDataset raw = cfg.data.csv.empty() ? synth_generate(cfg.data.synth)
                                           : load_csv(cfg.data.csv, CsvSchema{cfg.data.date_col});
  assign_splits(raw, cfg.data.split);
  cfg.model.variates = raw.variates();
  return normalize(raw);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
  std::size_t skipped_steps = 0;
};

struct MetricsReport {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t data_hash = 0;
  std::size_t lookback = 0, horizon = 0;
  std::size_t parameters = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  Metrics train, val, test;
  std::vector<double> train_curve;   // train mse per epoch
  std::vector<double> val_curve;     // val mse per epoch
  std::vector<double> epoch_seconds;
  std::size_t peak_memory_bytes = 0;

  /// Everything except wall-clock timings; identical across reruns at a
  /// fixed seed.
  nlohmann::json deterministic_json() const {
    auto metrics_json = [](const Metrics& m) {
      nlohmann::json j{{"mse", m.mse}, {"mae", m.mae}, {"count", m.count}};
      j["pearson"] = m.pearson ? nlohmann::json(*m.pearson) : nlohmann::json(nullptr);
      return j;
    };
    return {{"seed", seed},
            {"config_hash", config_hash},
            {"data_hash", data_hash},
            {"lookback", lookback},
            {"horizon", horizon},
            {"parameters", parameters},
            {"best_epoch", best_epoch},
            {"epochs_run", epochs_run},
            {"train", metrics_json(train)},
            {"val", metrics_json(val)},
            {"test", metrics_json(test)},
            {"train_curve", train_curve},
            {"val_curve", val_curve},
            {"peak_memory_bytes", peak_memory_bytes}};
  }

  nlohmann::json to_json() const {
    auto j = deterministic_json();
    j["epoch_seconds"] = epoch_seconds;
    return j;
  }
};

inline Tensor forward_inference(const Model& model, const Tensor& x) {
  Graph::Pause pause;
  return model.forward(x);
}

/// Metrics of the model over every window of a set, in order.
inline Metrics evaluate(const Model& model, const WindowSet& windows, std::size_t batch = 256) {
  MetricsAccumulator acc;
  for (std::size_t i = 0; i < windows.size(); i += batch) {
    const WindowBatch wb = windows.range(i, std::min(batch, windows.size() - i));
    acc.add(forward_inference(model, wb.inputs).values(), wb.targets.values());
  }
  return acc.finish();
}

namespace detail {

inline std::vector<std::vector<double>> snapshot(const ParameterList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : params) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

inline void restore(ParameterList& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t p = 0; p < params.size(); ++p)
    std::copy(snap[p].begin(), snap[p].end(), params[p].second.data().begin());
}

}  // namespace detail

struct TrainResult {
  Model model;
  MetricsReport report;
  std::vector<EpochRecord> epochs;
};

/// Trains on the train split with seeded shuffling, tracks validation MSE
/// each epoch, early-stops after `patience` epochs without improvement and
/// returns the best-validation parameters. Epoch records are written to `log`
/// as JSON lines.
inline TrainResult train_loop(const TrainConfig& cfg, const SeriesDataset& ds, std::ostream* log = nullptr) {
  cfg.validate();
  ModelConfig mcfg = cfg.model;
  mcfg.variates = ds.variates();
  TrainResult result{Model(mcfg, cfg.seed), {}, {}};
  Model& model = result.model;

  const WindowSet train_ws(ds, Split::train, mcfg.lookback, mcfg.horizon, cfg.data.stride);
  const WindowSet val_ws(ds, Split::val, mcfg.lookback, mcfg.horizon, cfg.data.eval_stride);

  ParameterList params = model.parameters();
  Adam adam(params, cfg.adam);
  Rng shuffle_rng(cfg.seed ^ 0x5851f42d4c957f2dull);
  std::vector<std::size_t> order(train_ws.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  MetricsReport& rep = result.report;
  rep.seed = cfg.seed;
  rep.config_hash = cfg.hash();
  rep.data_hash = dataset_hash(ds);
  rep.lookback = mcfg.lookback;
  rep.horizon = mcfg.horizon;
  rep.parameters = model.parameter_count();

  double best_val = std::numeric_limits<double>::infinity();
  auto best = detail::snapshot(params);
  std::size_t since_best = 0;
  std::size_t consecutive_bad = 0;
  std::size_t peak = 0;
  const std::size_t param_bytes = rep.parameters * sizeof(double) * 4;  // values, grads, 2 moments

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    std::size_t nbatches = (order.size() + cfg.batch - 1) / cfg.batch;
    if (cfg.max_batches > 0) nbatches = std::min(nbatches, cfg.max_batches);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const std::size_t skipped_before = adam.skipped();
    for (std::size_t b = 0; b < nbatches; ++b) {
      const std::size_t first = b * cfg.batch;
      const std::size_t count = std::min(cfg.batch, order.size() - first);
      const WindowBatch wb = train_ws.batch(std::span(order).subspan(first, count));
      Graph g;
      double loss_value = NAN;
      std::string failure;
      try {
        Graph::Scope scope(g);
        const Tensor loss = mse_loss(model.forward(wb.inputs), wb.targets);
        loss_value = loss.item();
        if (std::isfinite(loss_value)) g.backward(loss);
      } catch (const NumericError& e) {
        // Inputs were checked when the data was loaded, so this comes from
        // the weights (e.g. step sizes underflowing to zero).
        failure = e.what();
      }
      if (!std::isfinite(loss_value)) {
        if (++consecutive_bad >= 2) {
          throw DivergenceError("training diverged: non-finite loss on two consecutive batches (epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(b) + ")" +
                                (failure.empty() ? "" : ": " + failure));
        }
        model.zero_grad();
        continue;
      }
      consecutive_bad = 0;
      peak = std::max(peak, g.recorded_bytes());
      adam.step(params);
      model.zero_grad();
      loss_sum += loss_value;
      ++loss_count;
    }
    const Metrics val = evaluate(model, val_ws);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochRecord rec{epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : NAN, val.mse, val.mae,
                    secs, adam.skipped() - skipped_before};
    result.epochs.push_back(rec);
    rep.train_curve.push_back(rec.train_mse);
    rep.val_curve.push_back(rec.val_mse);
    rep.epoch_seconds.push_back(secs);
    if (log) {
      *log << nlohmann::json{{"epoch", rec.epoch},       {"train_mse", rec.train_mse},
                             {"val_mse", rec.val_mse},   {"val_mae", rec.val_mae},
                             {"seconds", rec.seconds},   {"skipped_steps", rec.skipped_steps}}
                  .dump()
           << '\n';
    }
    if (val.mse < best_val) {
      best_val = val.mse;
      best = detail::snapshot(params);
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      rep.epochs_run = epoch;
      break;
    }
    rep.epochs_run = epoch;
  }
  detail::restore(params, best);
  rep.peak_memory_bytes = peak + param_bytes;

  const WindowSet test_ws(ds, Split::test, mcfg.lookback, mcfg.horizon, cfg.data.eval_stride);
  rep.train = evaluate(model, WindowSet(ds, Split::train, mcfg.lookback, mcfg.horizon, cfg.data.eval_stride));
  rep.val = evaluate(model, val_ws);
  rep.test = evaluate(model, test_ws);

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_model((std::filesystem::path(cfg.out_dir) / "best.ckpt").string(), model,
               {{"data.mean", Tensor({ds.variates()}, ds.mean)},
                {"data.std", Tensor({ds.variates()}, ds.stddev)}});
    std::ofstream(std::filesystem::path(cfg.out_dir) / "report.json") << rep.to_json().dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation and robustness harnesses

/// Applies one ablation code (ft, fm, ma, rbf, ilt) to a model config.
inline ModelConfig apply_ablation(ModelConfig m, const std::string& code) {
  if (code == "ft") m.use_ft = false;
  else if (code == "fm") m.use_fmamba = false;
  else if (code == "ma") m.use_mamba = false;
  else if (code == "rbf") m.use_rbf = false;
  else if (code == "ilt") m.use_ilt = false;
  else throw ConfigError("unknown ablation variant '" + code + "' (expected ft, fm, ma, rbf or ilt)");
  return m;
}

inline std::string ablation_label(const std::string& code) {
  if (code == "full") return "full";
  if (code == "ft") return "w/o FT";
  if (code == "fm") return "w/o FM";
  if (code == "ma") return "w/o Ma";
  if (code == "rbf") return "w/o RBF";
  if (code == "ilt") return "w/o ILT";
  return code;
}

struct VariantReport {
  std::string code;
  std::string label;
  MetricsReport report;
};

/// Trains the full model and each listed variant with the same seed and data.
inline std::vector<VariantReport> ablate(const TrainConfig& base, const std::vector<std::string>& variants,
                                         const SeriesDataset& ds) {
  for (const auto& v : variants) apply_ablation(base.model, v);  // validate codes up front
  std::vector<VariantReport> out;
  TrainConfig full = base;
  full.out_dir.clear();
  out.push_back({"full", "full", train_loop(full, ds).report});
  for (const auto& v : variants) {
    TrainConfig cfg = full;
    cfg.model = apply_ablation(base.model, v);
    out.push_back({v, ablation_label(v), train_loop(cfg, ds).report});
  }
  return out;
}

/// Test metrics with noise injected into the inputs only: the test range of
/// the (normalised) series is perturbed, targets stay clean.
inline Metrics evaluate_noisy(const Model& model, const SeriesDataset& ds, double level, std::uint64_t noise_seed,
                              std::size_t eval_stride = 1) {
  const auto& m = model.config();
  const WindowSet targets(ds, Split::test, m.lookback, m.horizon, eval_stride);
  if (level == 0) return evaluate(model, targets);
  SeriesDataset noisy = ds;
  const std::size_t vars = ds.variates();
  const auto v = ds.values.values();
  const auto b = static_cast<std::ptrdiff_t>(ds.test.begin * vars);
  const auto e = static_cast<std::ptrdiff_t>(ds.test.end * vars);
  const Tensor segment({ds.test.size(), vars}, std::vector<double>(v.begin() + b, v.begin() + e));
  const Tensor perturbed = inject_noise(segment, level, noise_seed);
  std::vector<double> all(v.begin(), v.end());
  std::copy(perturbed.values().begin(), perturbed.values().end(), all.begin() + b);
  noisy.values = Tensor(ds.values.shape(), std::move(all));
  const WindowSet inputs(noisy, Split::test, m.lookback, m.horizon, eval_stride);

  MetricsAccumulator acc;
  for (std::size_t i = 0; i < targets.size(); i += 256) {
    const std::size_t n = std::min<std::size_t>(256, targets.size() - i);
    acc.add(forward_inference(model, inputs.range(i, n).inputs).values(), targets.range(i, n).targets.values());
  }
  return acc.finish();
}

struct NoisyMse {
  double clean = 0.0;
  std::vector<double> noisy;  // one per level, mean over draws
};

/// Clean and noisy test MSE of one trained model. One noise draw moves the
/// MSE by about as much as the effect being measured, so each level averages
/// `draws` independent draws; draw k of level i uses noise seed
/// seed * 1000003 + i * draws + k + 1.
inline NoisyMse noisy_test_mse(const Model& model, const SeriesDataset& ds, const std::vector<double>& levels,
                               std::uint64_t seed, std::size_t eval_stride = 1, std::size_t draws = 8) {
  if (draws < 1) throw ConfigError("noise draws must be >= 1");
  NoisyMse out{evaluate_noisy(model, ds, 0.0, 0, eval_stride).mse, {}};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < draws; ++k)
      sum += evaluate_noisy(model, ds, levels[i], seed * 1000003u + i * draws + k + 1, eval_stride).mse;
    out.noisy.push_back(sum / static_cast<double>(draws));
  }
  return out;
}

struct RobustnessRow {
  std::string variant;  // "full" or "w/o RBF"
  double level = 0.0;
  double test_mse = 0.0;     // median over seeds
  double degradation = 0.0;  // median over seeds of mse(level) - mse(clean)
  std::vector<double> per_seed_degradation;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trains the full model and the w/o RBF variant per seed, then measures the
/// test MSE degradation under input noise at each level.
inline std::vector<RobustnessRow> robustness(const TrainConfig& base, const std::vector<double>& levels,
                                             const SeriesDataset& ds, const std::vector<std::uint64_t>& seeds,
                                             std::size_t draws = 8) {
  for (double l : levels)
    if (!(l >= 0 && l < 1)) throw ConfigError("robustness levels must lie in [0, 1)");
  std::vector<RobustnessRow> rows;
  for (const std::string code : {"full", "rbf"}) {
    std::vector<std::vector<double>> mse(levels.size()), deg(levels.size());
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.out_dir.clear();
      cfg.seed = seed;
      if (code != "full") cfg.model = apply_ablation(base.model, code);
      const TrainResult tr = train_loop(cfg, ds);
      const auto noisy = noisy_test_mse(tr.model, ds, levels, seed, cfg.data.eval_stride, draws);
      for (std::size_t i = 0; i < levels.size(); ++i) {
        mse[i].push_back(noisy.noisy[i]);
        deg[i].push_back(noisy.noisy[i] - noisy.clean);
      }
    }
    for (std::size_t i = 0; i < levels.size(); ++i)
      rows.push_back({ablation_label(code), levels[i], median(mse[i]), median(deg[i]), deg[i]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Forward-cost scaling

struct ScalingPoint {
  std::size_t length = 0;
  double median_seconds = 0.0;
};

/// Median forward wall-clock of the full model per lookback length.
inline std::vector<ScalingPoint> bench_scaling(const std::vector<std::size_t>& lengths, std::size_t batch = 8,
                                               std::size_t variates = 8, std::size_t state_dim = 16,
                                               std::size_t trials = 20, std::uint64_t seed = 0) {
  std::vector<ScalingPoint> out;
  for (std::size_t len : lengths) {
    ModelConfig cfg;
    cfg.lookback = len;
    cfg.horizon = 96;
    cfg.variates = variates;
    cfg.state_dim = state_dim;
    const Model model(cfg, seed);
    Rng rng(seed + len);
    const Tensor x = uniform_tensor({batch, len, variates}, -1.0, 1.0, rng);
    forward_inference(model, x);  // warm-up (FFT plans, allocator)
    std::vector<double> times;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      forward_inference(model, x);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    out.push_back({len, median(times)});
  }
  return out;
}

}  // namespace fldm

#endif  // FLDM_TRAIN_HPP
