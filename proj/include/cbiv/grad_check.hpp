#pragma once

#include <cstddef>
#include <functional>

#include "cbiv/mlp.hpp"

namespace cbiv {

struct LossAndGrad {
  double value = 0.0;
  Matrix d_output;
};

using OutputLoss = std::function<LossAndGrad(const Matrix& output)>;

struct GradCheckReport {
  bool passed = true;
  double worst_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Smallest |hidden pre-activation| seen at the base point.
  double min_abs_preactivation = 0.0;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Compares `analytic` against central differences of `loss` for every entry
// of every tensor in `params`. `loss` must re-evaluate from the current
// parameter values.
GradCheckReport finite_difference_check(ParamSet& params, const std::function<double()>& loss,
                                        const ParamSet& analytic, double tolerance,
                                        double step = 1e-5);

// Checks Mlp::backward for loss_fn(forward(batch, training=true)) plus the
// weight-decay penalty.
GradCheckReport grad_check(Mlp& model, const OutputLoss& loss_fn, const Matrix& batch,
                           double tolerance, double step = 1e-5);

}  // namespace cbiv
