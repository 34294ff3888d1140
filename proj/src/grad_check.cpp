#include "cbiv/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cbiv {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(ParamSet& params, const std::function<double()>& loss,
                                        const ParamSet& analytic, double tolerance,
                                        double step) {
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& p = params[t];
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double saved = p(i, j);
        p(i, j) = saved + step;
        const double up = loss();
        p(i, j) = saved - step;
        const double down = loss();
        p(i, j) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[t](i, j);
        const double err = relative_error(a, numeric);
        ++report.checked;
        if (err > report.worst_relative_error || !std::isfinite(err)) {
          report.worst_relative_error = err;
          report.worst_tensor = t;
          report.worst_row = i;
          report.worst_col = j;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = std::isfinite(report.worst_relative_error) &&
                  report.worst_relative_error <= tolerance;
  return report;
}

GradCheckReport grad_check(Mlp& model, const OutputLoss& loss_fn, const Matrix& batch,
                           double tolerance, double step) {
  Matrix out = model.forward(batch, true);
  LossAndGrad base = loss_fn(out);
  const MlpGradients grads = model.backward(base.d_output);
  const double min_pre = model.min_abs_preactivation();

  auto loss = [&]() {
    Matrix o = model.forward(batch, true);
    return loss_fn(o).value + model.decay_penalty();
  };
  GradCheckReport report =
      finite_difference_check(model.params(), loss, grads.params, tolerance, step);
  report.min_abs_preactivation = min_pre;
  return report;
}

}  // namespace cbiv
