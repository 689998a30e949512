#ifndef FLDM_GRAD_CHECK_HPP
#define FLDM_GRAD_CHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "fldm/tensor.hpp"

namespace fldm {

namespace detail {

inline double eval_scalar(const std::function<Tensor()>& f) {
  Graph::Pause pause;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
  return v;
}

}  // namespace detail

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|),
/// where the analytic gradient comes from a backward pass through `f` and
/// `param` is perturbed in place (restored afterwards).
inline double grad_check_param(const std::function<Tensor()>& f, Tensor& param, double step) {
  if (!(step > 0)) throw Error("grad_check: step must be positive");
  param.set_requires_grad(true);
  param.zero_grad();
  {
    Graph g;
    Graph::Scope scope(g);
    Tensor y = f();
    if (!std::isfinite(y.item())) {
      throw NumericError("grad_check: function returned a non-finite value");
    }
    if (!y.is_leaf()) g.backward(y);
  }
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
  param.zero_grad();

  double worst = 0.0;
  auto values = param.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = detail::eval_scalar(f);
    values[i] = orig - step;
    const double down = detail::eval_scalar(f);
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Gradient check of a scalar function of a single tensor argument.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step) {
  Tensor leaf(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  return grad_check_param([&]() { return f(leaf); }, leaf, step);
}

}  // namespace fldm

#endif  // FLDM_GRAD_CHECK_HPP
