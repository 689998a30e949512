#ifndef FLDM_SMOOTHING_HPP
#define FLDM_SMOOTHING_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "fldm/tensor.hpp"

namespace fldm {

struct RBFConfig {
  double bandwidth = 1.0;   // in time steps
  std::size_t radius = 2;   // half window
};

namespace detail {

// Row-normalised Gaussian weights for each output step: entry (t, d + radius)
// weights x[t + d]. Rows near the edges drop the taps that fall outside
// [0, length) and renormalise.
inline std::vector<double> rbf_weights(std::size_t length, const RBFConfig& cfg) {
  const std::size_t width = 2 * cfg.radius + 1;
  std::vector<double> w(length * width, 0.0);
  const auto r = static_cast<long>(cfg.radius);
  for (std::size_t t = 0; t < length; ++t) {
    double total = 0.0;
    for (long d = -r; d <= r; ++d) {
      const long s = static_cast<long>(t) + d;
      if (s < 0 || s >= static_cast<long>(length)) continue;
      const double v = std::exp(-static_cast<double>(d * d) / (2.0 * cfg.bandwidth * cfg.bandwidth));
      w[t * width + static_cast<std::size_t>(d + r)] = v;
      total += v;
    }
    for (std::size_t j = 0; j < width; ++j) w[t * width + j] /= total;
  }
  return w;
}

}  // namespace detail

/// Gaussian-kernel smoothing of x[B, L, V] along the time axis, per variate.
/// The window is symmetric over the lookback (all of it is history).
inline Tensor rbf_smooth(const Tensor& x, const RBFConfig& cfg) {
  if (!(cfg.bandwidth > 0)) throw ConfigError("rbf_smooth: bandwidth must be positive");
  if (x.rank() != 3) throw ShapeError("rbf_smooth expects [B, L, V], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(1), vars = x.dim(2);
  if (len == 0) throw ShapeError("rbf_smooth: empty window");
  const auto weights = detail::rbf_weights(len, cfg);
  const std::size_t width = 2 * cfg.radius + 1;
  const auto r = static_cast<long>(cfg.radius);
  const auto xv = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * len * vars;
    for (std::size_t t = 0; t < len; ++t) {
      for (long d = -r; d <= r; ++d) {
        const long s = static_cast<long>(t) + d;
        if (s < 0 || s >= static_cast<long>(len)) continue;
        const double w = weights[t * width + static_cast<std::size_t>(d + r)];
        for (std::size_t v = 0; v < vars; ++v)
          out[base + t * vars + v] += w * xv[base + static_cast<std::size_t>(s) * vars + v];
      }
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("rbf_smooth", {x.impl()}, {result.impl()},
              [xi = x.impl(), oi = result.impl(), weights, batch, len, vars, width, r]() {
                xi->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                  const std::size_t base = b * len * vars;
                  for (std::size_t t = 0; t < len; ++t)
                    for (long d = -r; d <= r; ++d) {
                      const long s = static_cast<long>(t) + d;
                      if (s < 0 || s >= static_cast<long>(len)) continue;
                      const double w = weights[t * width + static_cast<std::size_t>(d + r)];
                      for (std::size_t v = 0; v < vars; ++v)
                        xi->grad[base + static_cast<std::size_t>(s) * vars + v] +=
                            w * oi->grad[base + t * vars + v];
                    }
                }
              });
  }
  return result;
}

}  // namespace fldm

#endif  // FLDM_SMOOTHING_HPP
