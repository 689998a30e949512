#ifndef FLDM_FMAMBA_HPP
#define FLDM_FMAMBA_HPP

#include <string>

#include "fldm/ops.hpp"
#include "fldm/spectral.hpp"
#include "fldm/ssm.hpp"

namespace fldm {

constexpr double kFloorSharpness = 10.0;

/// softplus(s z) / s: a smooth positivity floor that is ~z for z >> 1/s.
inline Tensor softplus_floor(const Tensor& z, double sharpness = kFloorSharpness) {
  return scale(softplus(scale(z, sharpness)), 1.0 / sharpness);
}

struct FMambaParameters {
  SSMParameters ssm;
  SpectralFilter filter;

  static FMambaParameters init(std::size_t channels, std::size_t state_dim,
                               std::size_t lookback, Rng& rng, bool random_filter = false,
                               bool per_variate_filter = false, double dt_min = 1e-3,
                               double dt_max = 1e-1) {
    FMambaParameters p;
    p.ssm = SSMParameters::init(channels, state_dim, rng, dt_min, dt_max);
    const std::size_t bins = spectral_bins(next_pow2(lookback));
    const std::size_t chans = per_variate_filter ? channels : 0;
    p.filter = random_filter ? SpectralFilter::random(bins, rng, chans)
                             : SpectralFilter::identity(bins, chans);
    return p;
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    ssm.collect(prefix, out);
    out.emplace_back(prefix + ".filter", filter.weights);
  }
};

/// Step sizes filtered along time by the learnable frequency response, then
/// floored to stay positive. delta is [B, L, V]; the transform runs per
/// (batch, variate) lane.
inline Tensor filter_delta(const Tensor& delta, const SpectralFilter& filter) {
  if (delta.rank() != 3) throw ShapeError("filter_delta expects [B, L, V], got " + shape_str(delta.shape()));
  const Tensor lanes = swap_last2(delta);  // [B, V, L]
  return swap_last2(softplus_floor(kernel_integral(lanes, filter)));
}

/// Fourier-filtered encoder: identical to the Mamba encoder except that the
/// step sizes pass through filter_delta before discretisation. With
/// `use_filter` false the spectral path is skipped entirely.
inline Tensor fmamba_encoder_forward(const Tensor& x, const FMambaParameters& p,
                                     const EncoderOptions& opt = {}, bool use_filter = true) {
  if (x.rank() != 3 || x.dim(2) != p.ssm.channels()) {
    throw ShapeError("fmamba encoder: input " + shape_str(x.shape()) + " vs " +
                     std::to_string(p.ssm.channels()) + " channels");
  }
  Tensor delta = compute_delta(x, p.ssm);
  if (use_filter) delta = filter_delta(delta, p.filter);
  return ssm_encoder(x, p.ssm, delta, opt);
}

}  // namespace fldm

#endif  // FLDM_FMAMBA_HPP
