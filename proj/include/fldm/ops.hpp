#ifndef FLDM_OPS_HPP
#define FLDM_OPS_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fldm/tensor.hpp"

// Differentiable primitives. Every op computes its forward eagerly and, when a
// graph is active and an input requires a gradient, records a closure that
// accumulates the vector-Jacobian product into its inputs.

namespace fldm {

namespace detail {

// Binary ops broadcast the shorter operand when its shape is a suffix of the
// longer one (bias vectors, per-channel scales).
inline Shape broadcast_suffix(const Shape& a, const Shape& b, const char* op) {
  const Shape& lo = a.size() >= b.size() ? a : b;
  const Shape& sh = a.size() >= b.size() ? b : a;
  if (!std::equal(sh.rbegin(), sh.rend(), lo.rbegin())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                     shape_str(b));
  }
  return lo;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

constexpr double kExpClamp = 80.0;

}  // namespace detail

enum class Activation { silu, softplus, exp, cos };

inline const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::silu: return "silu";
    case Activation::softplus: return "softplus";
    case Activation::exp: return "exp";
    case Activation::cos: return "cos";
  }
  return "?";
}

namespace detail {

template <class Fwd, class Dfa, class Dfb>
Tensor binary_op(const char* kind, const Tensor& a, const Tensor& b, Fwd fwd, Dfa dfa,
                 Dfb dfb) {
  Shape out_shape = broadcast_suffix(a.shape(), b.shape(), kind);
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* g = recording_graph({&a, &b})) {
    g->record(kind, {a.impl(), b.impl()}, {result.impl()},
              [ai = a.impl(), bi = b.impl(), oi = result.impl(), dfa, dfb]() {
                const std::size_t n = oi->values.size();
                const std::size_t na = ai->values.size();
                const std::size_t nb = bi->values.size();
                if (ai->requires_grad) ai->ensure_grad();
                if (bi->requires_grad) bi->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                  const double gy = oi->grad[i];
                  const double x = ai->values[i % na];
                  const double y = bi->values[i % nb];
                  if (ai->requires_grad) ai->grad[i % na] += gy * dfa(x, y);
                  if (bi->requires_grad) bi->grad[i % nb] += gy * dfb(x, y);
                }
              });
  }
  return result;
}

template <class Fwd, class Df>
Tensor unary_op(const char* kind, const Tensor& x, Fwd fwd, Df df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor result(x.shape(), std::move(out));
  if (Graph* g = recording_graph({&x})) {
    g->record(kind, {x.impl()}, {result.impl()}, [xi = x.impl(), oi = result.impl(), df]() {
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->values.size(); ++i) {
        xi->grad[i] += oi->grad[i] * df(xi->values[i], oi->values[i]);
      }
    });
  }
  return result;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary_op(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary_op(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

/// Elementwise activation. exp clamps its argument at 80 and warns.
inline Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::silu:
      return detail::unary_op(
          "silu", x, [](double v) { return v * detail::sigmoid(v); },
          [](double v, double) {
            const double s = detail::sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
          });
    case Activation::softplus:
      return detail::unary_op(
          "softplus", x, [](double v) { return detail::softplus(v); },
          [](double v, double) { return v > 30.0 ? 1.0 : detail::sigmoid(v); });
    case Activation::exp: {
      const auto xv = x.values();
      const auto clamped = std::count_if(xv.begin(), xv.end(),
                                         [](double v) { return v > detail::kExpClamp; });
      if (clamped > 0) {
        warn("exp argument clamped at 80 for " + std::to_string(clamped) + " element(s)");
      }
      return detail::unary_op(
          "exp", x, [](double v) { return std::exp(std::min(v, detail::kExpClamp)); },
          [](double v, double y) { return v > detail::kExpClamp ? 0.0 : y; });
    }
    case Activation::cos:
      return detail::unary_op(
          "cos", x, [](double v) { return std::cos(v); },
          [](double v, double) { return -std::sin(v); });
  }
  throw Error("unknown activation");
}

inline Tensor silu(const Tensor& x) { return activation(x, Activation::silu); }
inline Tensor softplus(const Tensor& x) { return activation(x, Activation::softplus); }

/// Batched matrix product over the last two axes; leading axes broadcast
/// with the usual right-aligned rules (size 1 or missing axes stretch).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];

  const Shape alead(a.shape().begin(), a.shape().end() - 2);
  const Shape blead(b.shape().begin(), b.shape().end() - 2);
  const std::size_t lead_rank = std::max(alead.size(), blead.size());
  Shape lead(lead_rank);
  for (std::size_t i = 0; i < lead_rank; ++i) {
    const std::size_t da =
        i + alead.size() >= lead_rank ? alead[i + alead.size() - lead_rank] : 1;
    const std::size_t db =
        i + blead.size() >= lead_rank ? blead[i + blead.size() - lead_rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    lead[i] = std::max(da, db);
  }

  // Offset of each output batch entry within the two operands.
  const std::size_t batches = shape_numel(lead);
  std::vector<std::size_t> aoff(batches), boff(batches);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    std::size_t rem = bi, ia = 0, ib = 0, sa = 1, sb = 1;
    for (std::size_t d = lead_rank; d-- > 0;) {
      const std::size_t idx = rem % lead[d];
      rem /= lead[d];
      if (d + alead.size() >= lead_rank) {
        const std::size_t dim = alead[d + alead.size() - lead_rank];
        ia += (dim == 1 ? 0 : idx) * sa;
        sa *= dim;
      }
      if (d + blead.size() >= lead_rank) {
        const std::size_t dim = blead[d + blead.size() - lead_rank];
        ib += (dim == 1 ? 0 : idx) * sb;
        sb *= dim;
      }
    }
    aoff[bi] = ia * m * k;
    boff[bi] = ib * k * n;
  }

  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const double* pa = av.data() + aoff[bi];
    const double* pb = bv.data() + boff[bi];
    double* po = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        for (std::size_t j = 0; j < n; ++j) po[i * n + j] += aip * pb[p * n + j];
      }
    }
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* g = detail::recording_graph({&a, &b})) {
    g->record("matmul", {a.impl(), b.impl()}, {result.impl()},
              [ai = a.impl(), bi_ = b.impl(), oi = result.impl(), aoff, boff, m, k, n]() {
                if (ai->requires_grad) ai->ensure_grad();
                if (bi_->requires_grad) bi_->ensure_grad();
                for (std::size_t bi = 0; bi < aoff.size(); ++bi) {
                  const double* go = oi->grad.data() + bi * m * n;
                  const double* pa = ai->values.data() + aoff[bi];
                  const double* pb = bi_->values.data() + boff[bi];
                  if (ai->requires_grad) {
                    double* ga = ai->grad.data() + aoff[bi];
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * pb[p * n + j];
                        ga[i * k + p] += s;
                      }
                  }
                  if (bi_->requires_grad) {
                    double* gb = bi_->grad.data() + boff[bi];
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = pa[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
                      }
                  }
                }
              });
  }
  return result;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor result = Tensor::scalar(s);
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("sum", {x.impl()}, {result.impl()}, [xi = x.impl(), oi = result.impl()]() {
      xi->ensure_grad();
      for (auto& gv : xi->grad) gv += oi->grad[0];
    });
  }
  return result;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Mean over one axis; the axis is removed from the result.
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("mean_axis: axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  for (auto& v : out) v /= static_cast<double>(len);
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("mean_axis", {x.impl()}, {result.impl()},
              [xi = x.impl(), oi = result.impl(), outer, inner, len]() {
                xi->ensure_grad();
                const double w = 1.0 / static_cast<double>(len);
                for (std::size_t o = 0; o < outer; ++o)
                  for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t i = 0; i < inner; ++i)
                      xi->grad[(o * len + l) * inner + i] += w * oi->grad[o * inner + i];
              });
  }
  return result;
}

/// Swaps the last two axes: [..., a, b] -> [..., b, a].
inline Tensor swap_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("swap_last2 needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[x.rank() - 2];
  const std::size_t c = x.shape()[x.rank() - 1];
  const std::size_t batches = x.numel() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("swap_last2", {x.impl()}, {result.impl()},
              [xi = x.impl(), oi = result.impl(), batches, r, c]() {
                xi->ensure_grad();
                for (std::size_t b = 0; b < batches; ++b)
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      xi->grad[b * r * c + i * c + j] += oi->grad[b * r * c + j * r + i];
              });
  }
  return result;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("reshape", {x.impl()}, {result.impl()}, [xi = x.impl(), oi = result.impl()]() {
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return result;
}

/// Contiguous slice [begin, begin + count) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.shape().back()) {
    throw ShapeError("slice_last: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  Shape out_shape = x.shape();
  out_shape.back() = count;
  std::vector<double> out(rows * count);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * width + begin + j];
  Tensor result(std::move(out_shape), std::move(out));
  if (Graph* g = detail::recording_graph({&x})) {
    g->record("slice_last", {x.impl()}, {result.impl()},
              [xi = x.impl(), oi = result.impl(), rows, width, begin, count]() {
                xi->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < count; ++j)
                    xi->grad[r * width + begin + j] += oi->grad[r * count + j];
              });
  }
  return result;
}

}  // namespace fldm

#endif  // FLDM_OPS_HPP
