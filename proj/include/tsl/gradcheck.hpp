#pragma once

#include <functional>

#include "tsl/tensor.hpp"

namespace tsl {

// Central-difference gradient check in 64-bit. `f` evaluates the scalar
// function at an arbitrary input; `analytic` is d f / d x at `x`.
// Returns max over coordinates of |analytic - central| / max(1, |analytic|).
inline double finite_diff_check(const std::function<double(const Tensor64&)>& f,
                                const Tensor64& x, const Tensor64& analytic,
                                double eps) {
  check(eps > 0, "finite_diff_check needs eps > 0");
  check(analytic.dims == x.dims, "analytic gradient shape " + analytic.dims.str() +
                                     " does not match input " + x.dims.str());
  Tensor64 probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.data.size(); ++i) {
    double v = probe.data[i];
    probe.data[i] = v + eps;
    double fp = f(probe);
    probe.data[i] = v - eps;
    double fm = f(probe);
    probe.data[i] = v;
    double central = (fp - fm) / (2.0 * eps);
    double a = analytic.data[i];
    double rel = std::abs(a - central) / std::max(1.0, std::abs(a));
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace tsl
