#include "cbiv/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cbiv/errors.hpp"

namespace cbiv {

void OutcomeConfig::validate() const {
  if (rep_hidden.empty()) throw ConfigError("OutcomeConfig: representation needs at least one layer");
  for (int w : rep_hidden)
    if (w < 1) throw ConfigError("OutcomeConfig: layer widths must be >= 1");
  for (int w : head_hidden)
    if (w < 1) throw ConfigError("OutcomeConfig: layer widths must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("OutcomeConfig: alpha must be >= 0");
  if (!(head_decay >= 0.0)) throw ConfigError("OutcomeConfig: head decay must be >= 0");
  balance.validate();
}

OutcomeModel::OutcomeModel(TreatmentKind kind, const OutcomeConfig& cfg, FeatureSource features,
                           int input_width, Rng& rng)
    : kind_(kind), cfg_(cfg), features_(std::move(features)) {
  cfg_.validate();
  if (kind_ == TreatmentKind::Binary && cfg_.balance.metric != BalanceMetric::Wasserstein) {
    throw ConfigError("OutcomeConfig: binary treatment balances with the Wasserstein metric");
  }
  if (kind_ == TreatmentKind::Continuous && cfg_.balance.metric != BalanceMetric::ClubMi) {
    throw ConfigError("OutcomeConfig: continuous treatment balances with the CLUB bound");
  }
  MlpSpec rep;
  rep.layer_widths.push_back(input_width);
  rep.layer_widths.insert(rep.layer_widths.end(), cfg_.rep_hidden.begin(), cfg_.rep_hidden.end() - 1);
  rep.output_width = cfg_.rep_hidden.back();
  rep.activation = cfg_.activation;
  rep.activate_output = true;
  rep_ = Mlp(rep, rng);

  const int c = cfg_.rep_hidden.back();
  MlpSpec head;
  head.layer_widths.push_back(kind_ == TreatmentKind::Binary ? c : c + 1);
  head.layer_widths.insert(head.layer_widths.end(), cfg_.head_hidden.begin(), cfg_.head_hidden.end());
  head.activation = cfg_.activation;
  head.l2_decay = cfg_.head_decay;
  const int n_heads = kind_ == TreatmentKind::Binary ? 2 : 1;
  for (int k = 0; k < n_heads; ++k) heads_.emplace_back(head, rng);
  if (kind_ == TreatmentKind::Continuous) club_ = ClubState(c, cfg_.balance, rng);
}

Vector OutcomeModel::predict_from_features(const Matrix& features, double t_query) const {
  const Matrix c = rep_.predict(features);
  if (kind_ == TreatmentKind::Binary) {
    if (t_query != 0.0 && t_query != 1.0) throw ConfigError("binary counterfactuals need t in {0, 1}");
    return heads_[static_cast<int>(t_query)].predict(c).col(0);
  }
  Matrix in(c.rows(), c.cols() + 1);
  in.col(0).setConstant(t_query);
  in.rightCols(c.cols()) = c;
  return heads_[0].predict(in).col(0);
}

Vector OutcomeModel::predict_from_features(const Matrix& features, const Vector& t_query) const {
  if (t_query.size() != features.rows()) throw ConfigError("predict: one treatment value per row expected");
  const Matrix c = rep_.predict(features);
  if (kind_ == TreatmentKind::Binary) {
    const Vector h0 = heads_[0].predict(c).col(0);
    const Vector h1 = heads_[1].predict(c).col(0);
    Vector out(c.rows());
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      if (t_query(i) != 0.0 && t_query(i) != 1.0) throw ConfigError("binary counterfactuals need t in {0, 1}");
      out(i) = t_query(i) == 1.0 ? h1(i) : h0(i);
    }
    return out;
  }
  Matrix in(c.rows(), c.cols() + 1);
  in.col(0) = t_query;
  in.rightCols(c.cols()) = c;
  return heads_[0].predict(in).col(0);
}

OutcomeStep outcome_objective(OutcomeModel& model, const Matrix& features, const Vector& y,
                              const Vector& mix, double alpha, OutcomeGradients* grads) {
  const Eigen::Index n = features.rows();
  if (y.size() != n || mix.size() != n) throw ConfigError("outcome_objective: row count mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  OutcomeStep step;

  const Matrix c = model.rep_net().forward(features, true);
  Matrix d_c;
  if (model.kind() == TreatmentKind::Binary) {
    const Vector h0 = model.head(0).forward(c, true).col(0);
    const Vector h1 = model.head(1).forward(c, true).col(0);
    const Vector pred = h1.cwiseProduct(mix) + h0.cwiseProduct(Vector::Ones(n) - mix);
    const Vector resid = pred - y;
    step.l_y = resid.squaredNorm() * inv_n;
    if (grads) {
      const Vector d_pred = 2.0 * inv_n * resid;
      MlpGradients g0 = model.head(0).backward(d_pred.cwiseProduct(Vector::Ones(n) - mix));
      MlpGradients g1 = model.head(1).backward(d_pred.cwiseProduct(mix));
      d_c = g0.input + g1.input;
      grads->heads = {std::move(g0.params), std::move(g1.params)};
    }
    if (alpha > 0.0) {
      MetricValue w = weighted_wasserstein(c, mix, model.config().balance);
      step.l_c = w.value;
      if (grads) d_c += alpha * w.d_reps;
    }
  } else {
    Matrix in(n, c.cols() + 1);
    in.col(0) = mix;
    in.rightCols(c.cols()) = c;
    const Vector pred = model.head(0).forward(in, true).col(0);
    const Vector resid = pred - y;
    step.l_y = resid.squaredNorm() * inv_n;
    if (grads) {
      MlpGradients g = model.head(0).backward(2.0 * inv_n * resid);
      d_c = g.input.rightCols(c.cols());
      grads->heads = {std::move(g.params)};
    }
    if (alpha > 0.0) {
      const Vector t_std = (mix.array() - model.club_t_mean()) / model.club_t_scale();
      MetricValue mi = club_mi(c, t_std, model.club());
      step.l_c = mi.value;
      if (grads) d_c += alpha * mi.d_reps;
    }
  }
  step.total = step.l_y + alpha * step.l_c;
  if (grads) grads->rep = model.rep_net().backward(d_c).params;
  return step;
}

Vector stage1_mix(const Dataset& ds, const TreatmentModel* tm, const EstimatorFlags& flags) {
  if (!flags.use_iv) {
    if (tm) throw ConfigError("the no-IV variant takes no treatment model");
    return ds.t;
  }
  if (!tm) throw ConfigError("the IV variant needs a trained treatment model");
  if (!tm->trained()) throw StateError("treatment model is not trained");
  return ds.kind == TreatmentKind::Binary ? predict_propensity(*tm, ds) : predict_treatment(*tm, ds);
}

OutcomeTrainResult train_outcome(const Dataset& ds, const TreatmentModel* tm, OutcomeModel& model,
                                 const EstimatorFlags& flags, int iterations, int batch_size,
                                 const OptimConfig& optim, Rng& rng) {
  if (iterations < 1) throw ConfigError("train_outcome: iterations must be >= 1");
  if (batch_size < 2) throw ConfigError("train_outcome: batch_size must be >= 2");
  if (ds.kind != model.kind()) throw ConfigError("train_outcome: treatment kind does not match the model");
  const Vector mix = stage1_mix(ds, tm, flags);
  const Matrix features = model.features()(ds);
  if (features.cols() != model.rep_net().input_width()) {
    throw ConfigError("train_outcome: feature width " + std::to_string(features.cols()) +
                      " does not match the model input width " +
                      std::to_string(model.rep_net().input_width()));
  }
  const double alpha = flags.use_balance ? model.config().alpha : 0.0;
  const Eigen::Index n = ds.size();
  const Eigen::Index b = std::min<Eigen::Index>(batch_size, n);

  if (model.kind() == TreatmentKind::Continuous) {
    const double m = mix.mean();
    const double sd = std::sqrt((mix.array() - m).square().mean());
    model.set_club_scaling(m, sd > 1e-12 ? sd : 1.0);
  }

  OptimState rep_opt(optim);
  std::vector<OptimState> head_opt(model.num_heads(), OptimState(optim));

  OutcomeTrainResult result;
  result.trace.reserve(iterations);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::Index cursor = n;
  Matrix fb(b, features.cols());
  Vector yb(b), mb(b);
  OutcomeGradients g;

  for (int it = 0; it < iterations; ++it) {
    if (cursor + b > n) {
      for (Eigen::Index i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(0, static_cast<int>(i))]);
      }
      cursor = 0;
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::Index r = order[cursor + i];
      fb.row(i) = features.row(r);
      yb(i) = ds.y(r);
      mb(i) = mix(r);
    }
    cursor += b;

    OutcomeStep step;
    try {
      step = outcome_objective(model, fb, yb, mb, alpha, &g);
    } catch (const DegenerateArmError&) {
      // Every row of this minibatch sits in one arm; fit it without balancing.
      ++result.skipped_balance;
      step = outcome_objective(model, fb, yb, mb, 0.0, &g);
    }
    if (!std::isfinite(step.total)) {
      throw NumericalError("train_outcome: non-finite loss at iteration " + std::to_string(it), it);
    }
    if (alpha > 0.0 && model.kind() == TreatmentKind::Continuous) {
      const Matrix c = model.rep_net().predict(fb);
      const Vector t_std = (mb.array() - model.club_t_mean()) / model.club_t_scale();
      for (int k = 0; k < model.config().balance.club_update_ratio; ++k) club_fit_step(model.club(), c, t_std);
    }
    rep_opt.step(model.rep_net().params(), g.rep);
    for (int k = 0; k < model.num_heads(); ++k) head_opt[k].step(model.head(k).params(), g.heads[k]);
    result.trace.push_back(step);
  }
  model.mark_trained();
  return result;
}

Vector predict_counterfactual(const OutcomeModel& model, const Dataset& ds, double t_query) {
  if (!model.trained()) throw StateError("predict_counterfactual: outcome model is not trained");
  return model.predict_from_features(model.features()(ds), t_query);
}

Vector predict_counterfactual(const OutcomeModel& model, const Dataset& ds, const Vector& t_query) {
  if (!model.trained()) throw StateError("predict_counterfactual: outcome model is not trained");
  return model.predict_from_features(model.features()(ds), t_query);
}

double estimate_ate(const OutcomeModel& model, const Dataset& ds) {
  if (model.kind() != TreatmentKind::Binary) throw ConfigError("estimate_ate needs a binary model");
  if (!model.trained()) throw StateError("estimate_ate: outcome model is not trained");
  const Matrix f = model.features()(ds);
  return (model.predict_from_features(f, 1.0) - model.predict_from_features(f, 0.0)).mean();
}

double counterfactual_mse(const OutcomeModel& model, const Dataset& ds, const Vector& t_grid) {
  if (model.kind() != TreatmentKind::Continuous) throw ConfigError("counterfactual_mse needs a continuous model");
  if (!model.trained()) throw StateError("counterfactual_mse: outcome model is not trained");
  const Matrix truth = structural_truth(ds, t_grid);
  const Matrix f = model.features()(ds);
  double sse = 0.0;
  for (Eigen::Index g = 0; g < t_grid.size(); ++g) {
    sse += (model.predict_from_features(f, t_grid(g)) - truth.col(g)).squaredNorm();
  }
  return sse / static_cast<double>(truth.size());
}

Vector treatment_grid(const Vector& t, int points) {
  if (t.size() < 1) throw ConfigError("treatment_grid: empty treatment vector");
  if (points < 1) throw ConfigError("treatment_grid: need at least one point");
  std::vector<double> s(t.data(), t.data() + t.size());
  std::sort(s.begin(), s.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double a = quantile(0.05), b = quantile(0.95);
  if (points == 1) return Vector::Constant(1, 0.5 * (a + b));
  return Vector::LinSpaced(points, a, b);
}

}  // namespace cbiv
