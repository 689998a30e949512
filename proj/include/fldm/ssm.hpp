#ifndef FLDM_SSM_HPP
#define FLDM_SSM_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fldm/ops.hpp"
#include "fldm/tensor.hpp"

namespace fldm {

/// Named handles to trainable tensors. Tensor copies share storage, so the
/// list can be used to read gradients and update values in place.
using ParameterList = std::vector<std::pair<std::string, Tensor>>;

enum class Discretization { zoh, paper_eq4 };
enum class ScanMode { sequential, chunked };

inline Discretization parse_discretization(const std::string& s) {
  if (s == "zoh") return Discretization::zoh;
  if (s == "paper_eq4") return Discretization::paper_eq4;
  throw ConfigError("unknown discretization '" + s + "' (expected zoh or paper_eq4)");
}

inline const char* discretization_name(Discretization d) {
  return d == Discretization::zoh ? "zoh" : "paper_eq4";
}

/// Parameters of one selective state-space encoder over V channels with
/// N states per channel.
struct SSMParameters {
  Tensor a_log;    // [V, N], A = -exp(a_log)
  Tensor w_b;      // [V, N]
  Tensor w_c;      // [V, N]
  Tensor w_delta;  // [V, V]
  Tensor b_delta;  // [V]
  Tensor gate_w;   // [V, V]
  Tensor out_w;    // [V, V]

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t state_dim() const { return a_log.dim(1); }

  /// Projections ~ U(+-1/sqrt(fan_in)); a_log = log(1..N) per channel; the
  /// step-size bias is the inverse softplus of a log-uniform draw in
  /// [dt_min, dt_max].
  static SSMParameters init(std::size_t channels, std::size_t state_dim, Rng& rng,
                            double dt_min = 1e-3, double dt_max = 1e-1) {
    SSMParameters p;
    std::vector<double> alog(channels * state_dim);
    for (std::size_t v = 0; v < channels; ++v)
      for (std::size_t n = 0; n < state_dim; ++n)
        alog[v * state_dim + n] = std::log(static_cast<double>(n + 1));
    p.a_log = Tensor({channels, state_dim}, std::move(alog), true);
    p.w_b = fan_in_uniform({channels, state_dim}, channels, rng);
    p.w_c = fan_in_uniform({channels, state_dim}, channels, rng);
    p.w_delta = fan_in_uniform({channels, channels}, channels, rng);
    std::vector<double> bias(channels);
    for (auto& b : bias) {
      const double dt = std::exp(rng.uniform(std::log(dt_min), std::log(dt_max)));
      b = dt + std::log(-std::expm1(-dt));  // softplus^-1(dt)
    }
    p.b_delta = Tensor({channels}, std::move(bias), true);
    p.gate_w = fan_in_uniform({channels, channels}, channels, rng);
    p.out_w = fan_in_uniform({channels, channels}, channels, rng);
    return p;
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".a_log", a_log);
    out.emplace_back(prefix + ".w_b", w_b);
    out.emplace_back(prefix + ".w_c", w_c);
    out.emplace_back(prefix + ".w_delta", w_delta);
    out.emplace_back(prefix + ".b_delta", b_delta);
    out.emplace_back(prefix + ".gate_w", gate_w);
    out.emplace_back(prefix + ".out_w", out_w);
  }

  /// A = -exp(a_log), recorded so a_log receives gradients.
  Tensor state_matrix() const { return scale(activation(a_log, Activation::exp), -1.0); }
};

/// Discretised per-step system, both [B, L, V, N].
struct DiscreteSystem {
  Tensor a_bar;
  Tensor b_bar;
};

/// Step sizes softplus(bias + x . w_delta) for x[B, L, V].
inline Tensor compute_delta(const Tensor& x, const SSMParameters& p) {
  return softplus(add(matmul(x, p.w_delta), p.b_delta));
}

/// A_bar = exp(delta * A); B_bar from the chosen rule with B = input
/// projection [B, L, N] broadcast over channels.
///   zoh:       B_bar = (delta A)^-1 (exp(delta A) - 1) delta B = expm1(delta A) / A * B
///   paper_eq4: B_bar = delta A^-1 exp(delta A) delta B       = delta^2 exp(delta A) / A * B
inline DiscreteSystem discretize(const Tensor& delta, const Tensor& a, const Tensor& bproj,
                                 Discretization rule) {
  if (delta.rank() != 3 || a.rank() != 2 || bproj.rank() != 3 || delta.dim(2) != a.dim(0) ||
      bproj.dim(0) != delta.dim(0) || bproj.dim(1) != delta.dim(1) || bproj.dim(2) != a.dim(1)) {
    throw ShapeError("discretize: delta " + shape_str(delta.shape()) + ", A " +
                     shape_str(a.shape()) + ", B " + shape_str(bproj.shape()));
  }
  const std::size_t batch = delta.dim(0), len = delta.dim(1), vars = delta.dim(2),
                    states = a.dim(1);
  const auto dv = delta.values();
  const auto av = a.values();
  const auto bv = bproj.values();
  for (double d : dv) {
    if (!(d > 0.0)) throw NumericError("discretize: step size must be positive");
  }
  const Shape shape{batch, len, vars, states};
  std::vector<double> abar(shape_numel(shape)), bbar(shape_numel(shape));
  for (std::size_t bl = 0; bl < batch * len; ++bl) {
    for (std::size_t v = 0; v < vars; ++v) {
      const double d = dv[bl * vars + v];
      for (std::size_t n = 0; n < states; ++n) {
        const double an = av[v * states + n];
        if (!(an < 0.0)) throw NumericError("discretize: A must be negative");
        const double da = d * an;
        const double e = std::exp(da);
        const double coef = rule == Discretization::zoh ? std::expm1(da) / an : d * d * e / an;
        const std::size_t i = (bl * vars + v) * states + n;
        abar[i] = e;
        bbar[i] = coef * bv[bl * states + n];
        // In exact arithmetic 0 < A_bar < 1; rounding reaches 1 when
        // delta |A| < 1e-16 and 0 when delta |A| > 745.
      }
    }
  }
  DiscreteSystem sys{Tensor(shape, std::move(abar)), Tensor(shape, std::move(bbar))};
  if (Graph* g = detail::recording_graph({&delta, &a, &bproj})) {
    g->record(
        "discretize", {delta.impl(), a.impl(), bproj.impl()}, {sys.a_bar.impl(), sys.b_bar.impl()},
        [di = delta.impl(), ai = a.impl(), bi = bproj.impl(), oa = sys.a_bar.impl(),
         ob = sys.b_bar.impl(), batch, len, vars, states, rule]() {
          if (di->requires_grad) di->ensure_grad();
          if (ai->requires_grad) ai->ensure_grad();
          if (bi->requires_grad) bi->ensure_grad();
          for (std::size_t bl = 0; bl < batch * len; ++bl) {
            for (std::size_t v = 0; v < vars; ++v) {
              const double d = di->values[bl * vars + v];
              double gd = 0.0;
              for (std::size_t n = 0; n < states; ++n) {
                const std::size_t i = (bl * vars + v) * states + n;
                const double an = ai->values[v * states + n];
                const double e = oa->values[i];
                const double bn = bi->values[bl * states + n];
                const double ga = oa->grad[i];
                const double gb = ob->grad[i];
                double coef, dcoef_dd, dcoef_da;
                if (rule == Discretization::zoh) {
                  const double em1 = std::expm1(d * an);
                  coef = em1 / an;
                  dcoef_dd = e;
                  dcoef_da = (d * an * e - em1) / (an * an);
                } else {
                  coef = d * d * e / an;
                  dcoef_dd = 2.0 * d * e / an + d * d * e;
                  dcoef_da = d * d * e * (d * an - 1.0) / (an * an);
                }
                gd += ga * an * e + gb * bn * dcoef_dd;
                if (ai->requires_grad) ai->grad[v * states + n] += ga * d * e + gb * bn * dcoef_da;
                if (bi->requires_grad) bi->grad[bl * states + n] += gb * coef;
              }
              if (di->requires_grad) di->grad[bl * vars + v] += gd;
            }
          }
        });
  }
  return sys;
}

namespace detail {

// h_t = a_t * h_{t-1} + b_t * x_t over [B, L, V, N] lanes, one step at a time.
inline void scan_sequential(std::span<const double> a, std::span<const double> b,
                            std::span<const double> x, std::size_t batch, std::size_t len,
                            std::size_t vars, std::size_t states, std::vector<double>& h) {
  const std::size_t lane = vars * states;
  for (std::size_t bb = 0; bb < batch; ++bb) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t cur = (bb * len + t) * lane;
      for (std::size_t v = 0; v < vars; ++v) {
        const double xt = x[(bb * len + t) * vars + v];
        for (std::size_t n = 0; n < states; ++n) {
          const std::size_t i = cur + v * states + n;
          const double prev = t == 0 ? 0.0 : h[i - lane];
          h[i] = a[i] * prev + b[i] * xt;
        }
      }
    }
  }
}

// Same recurrence evaluated chunk by chunk: each chunk runs from a zero state
// while tracking the running product of a_t, then the carried-in state is
// added back as prod(a) * h_{chunk start - 1}.
inline void scan_chunked(std::span<const double> a, std::span<const double> b,
                         std::span<const double> x, std::size_t batch, std::size_t len,
                         std::size_t vars, std::size_t states, std::size_t chunk,
                         std::vector<double>& h) {
  const std::size_t lane = vars * states;
  std::vector<double> prod(chunk * lane), carry(lane);
  for (std::size_t bb = 0; bb < batch; ++bb) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t t0 = 0; t0 < len; t0 += chunk) {
      const std::size_t t1 = std::min(len, t0 + chunk);
      for (std::size_t t = t0; t < t1; ++t) {
        const std::size_t cur = (bb * len + t) * lane;
        const std::size_t c = (t - t0) * lane;
        for (std::size_t v = 0; v < vars; ++v) {
          const double xt = x[(bb * len + t) * vars + v];
          for (std::size_t n = 0; n < states; ++n) {
            const std::size_t j = v * states + n;
            const double prev_local = t == t0 ? 0.0 : h[cur + j - lane];
            const double prev_prod = t == t0 ? 1.0 : prod[c + j - lane];
            h[cur + j] = a[cur + j] * prev_local + b[cur + j] * xt;
            prod[c + j] = a[cur + j] * prev_prod;
          }
        }
      }
      for (std::size_t t = t0; t < t1; ++t) {
        const std::size_t cur = (bb * len + t) * lane;
        const std::size_t c = (t - t0) * lane;
        for (std::size_t j = 0; j < lane; ++j) h[cur + j] += prod[c + j] * carry[j];
      }
      std::copy_n(h.begin() + static_cast<std::ptrdiff_t>(((bb * len + t1 - 1) * lane)), lane,
                  carry.begin());
    }
  }
}

}  // namespace detail

constexpr std::size_t kScanChunk = 64;

/// Selective scan with h_0 = 0: h_t = A_bar_t * h_{t-1} + B_bar_t * x_t,
/// y_t = sum_n h_t[., n] * C_t[n]. Shapes: A_bar, B_bar [B, L, V, N],
/// x [B, L, V], C [B, L, N]; returns [B, L, V].
inline Tensor selective_scan(const DiscreteSystem& sys, const Tensor& x, const Tensor& c,
                             ScanMode mode = ScanMode::sequential) {
  const auto& s = sys.a_bar.shape();
  if (s.size() != 4 || sys.b_bar.shape() != s || x.shape() != Shape{s[0], s[1], s[2]} ||
      c.shape() != Shape{s[0], s[1], s[3]}) {
    throw ShapeError("selective_scan: A_bar " + shape_str(s) + ", B_bar " +
                     shape_str(sys.b_bar.shape()) + ", x " + shape_str(x.shape()) + ", C " +
                     shape_str(c.shape()));
  }
  const std::size_t batch = s[0], len = s[1], vars = s[2], states = s[3];
  auto hs = std::make_shared<std::vector<double>>(sys.a_bar.numel());
  if (mode == ScanMode::sequential) {
    detail::scan_sequential(sys.a_bar.values(), sys.b_bar.values(), x.values(), batch, len, vars,
                            states, *hs);
  } else {
    detail::scan_chunked(sys.a_bar.values(), sys.b_bar.values(), x.values(), batch, len, vars,
                         states, kScanChunk, *hs);
  }
  const auto cv = c.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t bl = 0; bl < batch * len; ++bl)
    for (std::size_t v = 0; v < vars; ++v) {
      double acc = 0.0;
      for (std::size_t n = 0; n < states; ++n)
        acc += (*hs)[(bl * vars + v) * states + n] * cv[bl * states + n];
      out[bl * vars + v] = acc;
    }
  Tensor result(x.shape(), std::move(out));
  if (Graph* g = detail::recording_graph({&sys.a_bar, &sys.b_bar, &x, &c})) {
    g->record("selective_scan", {sys.a_bar.impl(), sys.b_bar.impl(), x.impl(), c.impl()},
              {result.impl()},
              [ai = sys.a_bar.impl(), bi = sys.b_bar.impl(), xi = x.impl(), ci = c.impl(),
               oi = result.impl(), hs, batch, len, vars, states]() {
                for (auto* t : {ai.get(), bi.get(), xi.get(), ci.get()})
                  if (t->requires_grad) t->ensure_grad();
                const std::size_t lane = vars * states;
                std::vector<double> gh(lane);
                for (std::size_t bb = 0; bb < batch; ++bb) {
                  std::fill(gh.begin(), gh.end(), 0.0);
                  for (std::size_t t = len; t-- > 0;) {
                    const std::size_t row = bb * len + t;
                    const std::size_t cur = row * lane;
                    for (std::size_t v = 0; v < vars; ++v) {
                      const double gy = oi->grad[row * vars + v];
                      const double xt = xi->values[row * vars + v];
                      double gx = 0.0;
                      for (std::size_t n = 0; n < states; ++n) {
                        const std::size_t j = v * states + n;
                        // dL/dh_t = C_t gy_t + A_bar_{t+1} dL/dh_{t+1}
                        const double next = t + 1 < len ? ai->values[cur + lane + j] * gh[j] : 0.0;
                        gh[j] = ci->values[row * states + n] * gy + next;
                        if (ci->requires_grad) ci->grad[row * states + n] += gy * (*hs)[cur + j];
                        const double prev = t == 0 ? 0.0 : (*hs)[cur + j - lane];
                        if (ai->requires_grad) ai->grad[cur + j] += gh[j] * prev;
                        if (bi->requires_grad) bi->grad[cur + j] += gh[j] * xt;
                        gx += gh[j] * bi->values[cur + j];
                      }
                      if (xi->requires_grad) xi->grad[row * vars + v] += gx;
                    }
                  }
                }
              });
  }
  return result;
}

struct EncoderOptions {
  Discretization rule = Discretization::zoh;
  ScanMode scan = ScanMode::sequential;
};

/// Shared encoder body given precomputed step sizes:
/// scan -> SiLU gate -> output projection.
inline Tensor ssm_encoder(const Tensor& x, const SSMParameters& p, const Tensor& delta,
                          const EncoderOptions& opt) {
  const Tensor bproj = matmul(x, p.w_b);
  const Tensor cproj = matmul(x, p.w_c);
  const DiscreteSystem sys = discretize(delta, p.state_matrix(), bproj, opt.rule);
  const Tensor u1 = selective_scan(sys, x, cproj, opt.scan);
  const Tensor u2 = mul(u1, silu(matmul(x, p.gate_w)));
  return matmul(u2, p.out_w);
}

/// Mamba encoder layer on x[B, L, V].
inline Tensor mamba_encoder_forward(const Tensor& x, const SSMParameters& p,
                                    const EncoderOptions& opt = {}) {
  if (x.rank() != 3 || x.dim(2) != p.channels()) {
    throw ShapeError("mamba encoder: input " + shape_str(x.shape()) + " vs " +
                     std::to_string(p.channels()) + " channels");
  }
  return ssm_encoder(x, p, compute_delta(x, p), opt);
}

}  // namespace fldm

#endif  // FLDM_SSM_HPP
