// csiam/grad_check.hpp
//
// Central-difference gradient verification. The differentiable function is a
// closure over a set of named f64 tensors; it rebuilds its graph on every
// call so perturbed evaluations are honest re-executions.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "csiam/tensor.hpp"

namespace csiam {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// `params` are the tensors the loss depends on; `loss_value` evaluates the
// loss from their current contents; `analytic_grads` must return gradients in
// the same order (computed once, before any perturbation).
//
// Relative error is measured against the largest gradient magnitude seen for
// that parameter tensor, so components with true zero gradient do not blow
// the ratio up.
inline GradCheckResult grad_check(std::vector<Tensor<double>*> params,
                                  const std::function<double()>& loss_value,
                                  const std::function<std::vector<Tensor<double>>()>& analytic_grads,
                                  double eps = 1e-5,
                                  const std::vector<std::string>& names = {}) {
  GradCheckResult res;
  const std::vector<Tensor<double>> analytic = analytic_grads();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    const Tensor<double>& ga = analytic[pi];
    Tensor<double> gn(p.shape);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double keep = p[i];
      p[i] = keep + eps;
      const double up = loss_value();
      p[i] = keep - eps;
      const double dn = loss_value();
      p[i] = keep;
      gn[i] = (up - dn) / (2.0 * eps);
    }
    double scale = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) scale = std::max({scale, std::abs(ga[i]), std::abs(gn[i])});
    scale = std::max(scale, 1e-10);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double rel = std::abs(ga[i] - gn[i]) / scale;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = pi < names.size() ? names[pi] : ("param" + std::to_string(pi));
        res.worst_index = i;
        res.analytic = ga[i];
        res.numeric = gn[i];
      }
    }
  }
  return res;
}

}  // namespace csiam
