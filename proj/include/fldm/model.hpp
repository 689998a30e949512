#ifndef FLDM_MODEL_HPP
#define FLDM_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fldm/fmamba.hpp"
#include "fldm/ops.hpp"
#include "fldm/smoothing.hpp"
#include "fldm/spectral.hpp"
#include "fldm/ssm.hpp"

namespace fldm {

struct ModelConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t variates = 7;
  std::size_t hidden = 0;  // 0: work directly on the V variates
  std::size_t state_dim = 16;
  std::size_t blocks = 2;
  std::size_t ilt_modes = 8;
  double dt_min = 1e-3;  // initial step sizes are log-uniform in [dt_min, dt_max]
  double dt_max = 1e-1;
  RBFConfig rbf;
  bool use_rbf = true;
  bool use_fmamba = true;
  bool use_mamba = true;
  bool use_ft = true;
  bool use_ilt = true;
  Discretization discretization = Discretization::zoh;
  ScanMode scan = ScanMode::sequential;
  bool random_filter_init = false;
  bool per_variate_filter = false;

  std::size_t channels() const { return hidden == 0 ? variates : hidden; }
  bool embeds() const { return hidden != 0 && hidden != variates; }

  void validate() const {
    if (lookback < 1 || horizon < 1 || variates < 1 || state_dim < 1 || ilt_modes < 1 ||
        blocks < 1) {
      throw ConfigError("model: lookback, horizon, variates, state_dim, ilt.modes and blocks must be >= 1");
    }
    if (!use_fmamba && !use_mamba) {
      throw ConfigError("model: at least one of use_fmamba / use_mamba must be enabled");
    }
    if (!(dt_min > 0 && dt_min <= dt_max)) throw ConfigError("model: need 0 < ssm.dt_min <= ssm.dt_max");
    if (use_rbf && !(rbf.bandwidth > 0)) throw ConfigError("model: rbf.bandwidth must be positive");
  }
};

/// Affine map from the unpacked half spectrum (2 * bins values) to H steps.
struct FusionParams {
  Tensor weight;  // [2 * bins, H]
  Tensor bias;    // [H]
};

/// Per-channel projection of the horizon-pooled representation onto the
/// mode parameters (A, sigma, w, phi) x M, laid out along the last axis.
struct ILTHeadParams {
  Tensor proj_w;  // [D, 4M]
  Tensor proj_b;  // [D, 4M]
  std::size_t modes() const { return proj_w.dim(1) / 4; }
};

/// Stand-in for the ILT head in the "w/o ILT" variant: one affine map over
/// the horizon axis.
struct CompensationParams {
  Tensor weight;  // [H, H]
  Tensor bias;    // [H]
};

struct FMMBlockParams {
  std::optional<FMambaParameters> fmamba;
  std::optional<SSMParameters> mamba;
};

struct ModelParameters {
  std::optional<Tensor> embed;    // [V, D]
  std::vector<FMMBlockParams> blocks;
  FusionParams fusion;
  std::optional<ILTHeadParams> ilt;
  std::optional<CompensationParams> compensation;
  std::optional<Tensor> readout;  // [D, V]

  static ModelParameters init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParameters p;
    const std::size_t d = cfg.channels();
    if (cfg.embeds()) {
      p.embed = fan_in_uniform({cfg.variates, d}, cfg.variates, rng);
      p.readout = fan_in_uniform({d, cfg.variates}, d, rng);
    }
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      FMMBlockParams bp;
      if (cfg.use_fmamba) {
        bp.fmamba = FMambaParameters::init(d, cfg.state_dim, cfg.lookback, rng,
                                           cfg.random_filter_init, cfg.per_variate_filter, cfg.dt_min,
                                           cfg.dt_max);
      }
      if (cfg.use_mamba) bp.mamba = SSMParameters::init(d, cfg.state_dim, rng, cfg.dt_min, cfg.dt_max);
      p.blocks.push_back(std::move(bp));
    }
    const std::size_t feat = 2 * spectral_bins(next_pow2(cfg.lookback));
    p.fusion.weight = fan_in_uniform({feat, cfg.horizon}, feat, rng);
    p.fusion.bias = fan_in_uniform({cfg.horizon}, feat, rng);
    if (cfg.use_ilt) {
      const std::size_t m = cfg.ilt_modes;
      ILTHeadParams ip;
      ip.proj_w = fan_in_uniform({d, 4 * m}, 1, rng);
      // Mode biases: zero amplitude and phase, raw decay 0 (sigma = ln 2),
      // angular frequencies at whole cycles per horizon (2 pi n).
      std::vector<double> bias(d * 4 * m, 0.0);
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t n = 0; n < m; ++n)
          bias[c * 4 * m + 2 * m + n] = 2.0 * std::numbers::pi * static_cast<double>(n);
      ip.proj_b = Tensor({d, 4 * m}, std::move(bias), true);
      p.ilt = std::move(ip);
    } else {
      CompensationParams cp;
      std::vector<double> eye(cfg.horizon * cfg.horizon, 0.0);
      for (std::size_t i = 0; i < cfg.horizon; ++i) eye[i * cfg.horizon + i] = 1.0;
      cp.weight = Tensor({cfg.horizon, cfg.horizon}, std::move(eye), true);
      cp.bias = Tensor::zeros({cfg.horizon}, true);
      p.compensation = std::move(cp);
    }
    return p;
  }

  /// Trainable tensors in a stable order. Filters are left out when the
  /// spectral path is disabled since they never influence the output.
  ParameterList collect(const ModelConfig& cfg) const {
    ParameterList out;
    if (embed) out.emplace_back("embed", *embed);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string pre = "block" + std::to_string(b);
      if (blocks[b].fmamba) {
        if (cfg.use_ft) {
          blocks[b].fmamba->collect(pre + ".fmamba", out);
        } else {
          blocks[b].fmamba->ssm.collect(pre + ".fmamba", out);
        }
      }
      if (blocks[b].mamba) blocks[b].mamba->collect(pre + ".mamba", out);
    }
    out.emplace_back("fusion.weight", fusion.weight);
    out.emplace_back("fusion.bias", fusion.bias);
    if (ilt) {
      out.emplace_back("ilt.proj_w", ilt->proj_w);
      out.emplace_back("ilt.proj_b", ilt->proj_b);
    }
    if (compensation) {
      out.emplace_back("compensation.weight", compensation->weight);
      out.emplace_back("compensation.bias", compensation->bias);
    }
    if (readout) out.emplace_back("readout", *readout);
    return out;
  }
};

/// Parallel FMamba + Mamba encoders on the same input with summed outputs.
/// A missing branch contributes nothing.
inline Tensor fmm_block_forward(const Tensor& x, const FMMBlockParams& block,
                                const EncoderOptions& opt = {}, bool use_ft = true) {
  if (!block.fmamba && !block.mamba) throw ConfigError("FMM block has both branches disabled");
  std::optional<Tensor> out;
  if (block.fmamba) out = fmamba_encoder_forward(x, *block.fmamba, opt, use_ft);
  if (block.mamba) {
    Tensor m = mamba_encoder_forward(x, *block.mamba, opt);
    out = out ? add(*out, m) : m;
  }
  return *out;
}

/// y[B, L, D] -> half spectrum along time, re || im -> affine -> [B, H, D].
inline Tensor fuse_and_project(const Tensor& y, const FusionParams& fp) {
  if (y.rank() != 3) throw ShapeError("fuse_and_project expects [B, L, D], got " + shape_str(y.shape()));
  const Tensor feats = rfft_features(swap_last2(y));            // [B, D, 2 bins]
  const Tensor proj = add(matmul(feats, fp.weight), fp.bias);  // [B, D, H]
  return swap_last2(proj);
}

/// Sum of M damped cosines on the grid t_j = j / H:
///   out[..., j] = sum_n A_n exp(-sigma_n t_j) cos(w_n t_j + phi_n).
/// All parameter tensors are [..., M]; the result is [..., H].
inline Tensor damped_cosine_sum(const Tensor& amp, const Tensor& sigma, const Tensor& omega,
                                const Tensor& phase, std::size_t horizon) {
  if (sigma.shape() != amp.shape() || omega.shape() != amp.shape() ||
      phase.shape() != amp.shape() || amp.rank() == 0) {
    throw ShapeError("damped_cosine_sum: parameter shapes differ");
  }
  const std::size_t modes = amp.shape().back();
  const std::size_t rows = amp.numel() / modes;
  Shape shape = amp.shape();
  shape.back() = horizon;
  std::vector<double> out(rows * horizon, 0.0);
  const auto av = amp.values(), sv = sigma.values(), wv = omega.values(), pv = phase.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < horizon; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(horizon);
      double acc = 0.0;
      for (std::size_t n = 0; n < modes; ++n) {
        const std::size_t i = r * modes + n;
        acc += av[i] * std::exp(-sv[i] * t) * std::cos(wv[i] * t + pv[i]);
      }
      out[r * horizon + j] = acc;
    }
  Tensor result(std::move(shape), std::move(out));
  if (Graph* g = detail::recording_graph({&amp, &sigma, &omega, &phase})) {
    g->record("damped_cosine_sum", {amp.impl(), sigma.impl(), omega.impl(), phase.impl()},
              {result.impl()},
              [ai = amp.impl(), si = sigma.impl(), wi = omega.impl(), pi = phase.impl(),
               oi = result.impl(), rows, modes, horizon]() {
                for (auto* t : {ai.get(), si.get(), wi.get(), pi.get()})
                  if (t->requires_grad) t->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < horizon; ++j) {
                    const double t = static_cast<double>(j) / static_cast<double>(horizon);
                    const double go = oi->grad[r * horizon + j];
                    for (std::size_t n = 0; n < modes; ++n) {
                      const std::size_t i = r * modes + n;
                      const double a = ai->values[i];
                      const double e = std::exp(-si->values[i] * t);
                      const double arg = wi->values[i] * t + pi->values[i];
                      const double c = std::cos(arg), s = std::sin(arg);
                      if (ai->requires_grad) ai->grad[i] += go * e * c;
                      if (si->requires_grad) si->grad[i] -= go * a * t * e * c;
                      if (wi->requires_grad) wi->grad[i] -= go * a * e * s * t;
                      if (pi->requires_grad) pi->grad[i] -= go * a * e * s;
                    }
                  }
              });
  }
  return result;
}

/// Mode parameters of the inverse-Laplace head for Y[B, H, D]: each channel's
/// horizon mean is projected onto (A, sigma >= 0, w, phi) for M modes.
struct ILTModes {
  Tensor amplitude, decay, frequency, phase;  // each [B, D, M]
};

inline ILTModes ilt_modes(const Tensor& y, const ILTHeadParams& ip) {
  if (y.rank() != 3 || y.dim(2) != ip.proj_w.dim(0)) {
    throw ShapeError("ilt head: input " + shape_str(y.shape()) + " vs projection " +
                     shape_str(ip.proj_w.shape()));
  }
  const std::size_t batch = y.dim(0), chans = y.dim(2), m = ip.modes();
  const Tensor pooled = reshape(mean_axis(y, 1), {batch, chans, 1, 1});
  const Tensor w = reshape(ip.proj_w, {chans, 1, 4 * m});
  const Tensor raw = add(reshape(matmul(pooled, w), {batch, chans, 4 * m}), ip.proj_b);
  return {slice_last(raw, 0, m), softplus(slice_last(raw, m, m)), slice_last(raw, 2 * m, m),
          slice_last(raw, 3 * m, m)};
}

/// Y + sum_n A_n exp(-sigma_n t) cos(w_n t + phi_n) on t_j = j / H.
inline Tensor ilt_head_forward(const Tensor& y, const ILTHeadParams& ip) {
  const ILTModes modes = ilt_modes(y, ip);
  const Tensor wave =
      damped_cosine_sum(modes.amplitude, modes.decay, modes.frequency, modes.phase, y.dim(1));
  return add(y, swap_last2(wave));
}

inline Tensor compensation_forward(const Tensor& y, const CompensationParams& cp) {
  return swap_last2(add(matmul(swap_last2(y), cp.weight), cp.bias));
}

/// Full forecaster x[B, L, V] -> [B, H, V].
inline Tensor model_forward(const Tensor& x, const ModelConfig& cfg, const ModelParameters& p) {
  if (x.rank() != 3 || x.dim(1) != cfg.lookback || x.dim(2) != cfg.variates) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match lookback " +
                     std::to_string(cfg.lookback) + " / variates " + std::to_string(cfg.variates));
  }
  if (!x.all_finite()) throw NumericError("model input contains NaN or Inf");
  const EncoderOptions opt{cfg.discretization, cfg.scan};
  Tensor h = cfg.use_rbf ? rbf_smooth(x, cfg.rbf) : x;
  if (p.embed) h = matmul(h, *p.embed);
  for (const auto& block : p.blocks) h = fmm_block_forward(h, block, opt, cfg.use_ft);
  Tensor y = fuse_and_project(h, p.fusion);
  y = p.ilt ? ilt_head_forward(y, *p.ilt) : compensation_forward(y, *p.compensation);
  if (p.readout) y = matmul(y, *p.readout);
  return y;
}

/// Configuration, parameters and the seed they were drawn from.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    Rng rng(seed);
    params_ = ModelParameters::init(cfg_, rng);
  }

  Tensor forward(const Tensor& x) const { return model_forward(x, cfg_, params_); }

  ParameterList parameters() const { return params_.collect(cfg_); }

  void zero_grad() {
    for (auto& [name, t] : parameters()) t.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelParameters& params() const { return params_; }
  ModelParameters& params() { return params_; }
  std::uint64_t seed() const { return seed_; }

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  ModelParameters params_;
};

}  // namespace fldm

#endif  // FLDM_MODEL_HPP
