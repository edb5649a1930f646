#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "asgcn/rng.hpp"
#include "asgcn/tape.hpp"

namespace asgcn {

// Central finite differences against the analytic gradients left in
// Parameter::grad by `loss_fn`. `loss_fn` must run a full forward +
// backward pass (with gradients zeroed beforehand by this function) and
// return the loss value; it must be deterministic for fixed inputs.
//
// Checks up to `coords_per_param` coordinates per parameter (all of them
// when the parameter is small). Returns the maximum relative error
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<double()>& loss_fn,
                         const std::vector<Parameter*>& params,
                         double eps = 1e-5, std::size_t coords_per_param = 6,
                         std::uint64_t seed = 0x5eed) {
  for (Parameter* p : params) p->zero_grad();
  const double base = loss_fn();
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> coords;
    if (n <= coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < coords_per_param; ++i)
        coords.push_back(rng.index(n));
    }
    for (std::size_t c : coords) {
      const double orig = p.value[c];
      p.value[c] = orig + eps;
      for (Parameter* q : params) q->zero_grad();
      const double up = loss_fn();
      p.value[c] = orig - eps;
      for (Parameter* q : params) q->zero_grad();
      const double down = loss_fn();
      p.value[c] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss at perturbation");
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][c];
      const double err =
          std::abs(a - numeric) /
          std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  // Leave the analytic gradients in place for the caller.
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    params[pi]->grad = analytic[pi];
  return worst;
}

}  // namespace asgcn
