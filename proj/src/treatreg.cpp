#include "cbiv/treatreg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cbiv/balance.hpp"
#include "cbiv/errors.hpp"

namespace cbiv {

const char* to_string(ColumnSet c) {
  switch (c) {
    case ColumnSet::ZOnly: return "Z";
    case ColumnSet::XOnly: return "X";
    case ColumnSet::ZAndX: return "Z,X";
    case ColumnSet::Latent: return "L";
  }
  return "?";
}

void FeatureSource::validate() const {
  if (columns == ColumnSet::Latent && (!latent || !latent->trained())) {
    throw ConfigError("latent features need a trained latent model");
  }
}

int FeatureSource::width(const Dataset& ds) const {
  switch (columns) {
    case ColumnSet::ZOnly: return static_cast<int>(ds.z.cols());
    case ColumnSet::XOnly: return static_cast<int>(ds.x.cols());
    case ColumnSet::ZAndX: return static_cast<int>(ds.z.cols() + ds.x.cols());
    case ColumnSet::Latent:
      validate();
      return latent->feature_width();
  }
  return 0;
}

Matrix FeatureSource::operator()(const Dataset& ds) const {
  switch (columns) {
    case ColumnSet::ZOnly:
      if (ds.z.cols() == 0) throw ConfigError("input mode needs Z columns but the dataset has none");
      return ds.z;
    case ColumnSet::XOnly: return ds.x;
    case ColumnSet::ZAndX: {
      if (ds.z.cols() == 0) throw ConfigError("input mode needs Z columns but the dataset has none");
      Matrix m(ds.size(), ds.z.cols() + ds.x.cols());
      m << ds.z, ds.x;
      return m;
    }
    case ColumnSet::Latent:
      validate();
      return extract_latents(*latent, ds);
  }
  return {};
}

void InputMode::validate() const {
  if (stage2 == ColumnSet::ZOnly) throw ConfigError("stage-2 inputs cannot be Z only");
}

void TreatmentConfig::validate() const {
  for (int h : hidden)
    if (h < 1) throw ConfigError("TreatmentConfig: hidden widths must be >= 1");
  if (components < 1) throw ConfigError("TreatmentConfig: components must be >= 1");
}

TreatmentModel::TreatmentModel(TreatmentModelKind kind, const TreatmentConfig& cfg,
                               FeatureSource features, int input_width, Rng& rng)
    : kind_(kind), cfg_(cfg), features_(std::move(features)) {
  cfg_.validate();
  if (kind_ == TreatmentModelKind::BinaryLogistic && cfg_.components != 1) {
    throw ConfigError("TreatmentConfig: mixture components apply to continuous treatment only");
  }
  MlpSpec spec;
  spec.layer_widths.push_back(input_width);
  spec.layer_widths.insert(spec.layer_widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  spec.activation = cfg_.activation;
  spec.use_batchnorm = cfg_.batchnorm;
  spec.output_width = cfg_.components == 1 ? 1 : 3 * cfg_.components;
  net_ = Mlp(spec, rng);
}

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double clip_prob(double p) { return std::clamp(p, kPropensityClip, 1.0 - kPropensityClip); }

// Mean loss over the rows of `out` and, when d_out is given, its gradient.
double loss_and_grad(const TreatmentModel& model, const Matrix& out, const Vector& t, Matrix* d_out) {
  const Eigen::Index n = out.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  if (d_out) d_out->resize(n, out.cols());

  if (model.kind() == TreatmentModelKind::BinaryLogistic) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p_raw = sigmoid(out(i, 0));
      const double p = clip_prob(p_raw);
      loss -= t(i) * std::log(p) + (1.0 - t(i)) * std::log(1.0 - p);
      // The clip is flat outside its range.
      if (d_out) (*d_out)(i, 0) = p == p_raw ? inv_n * (p - t(i)) : 0.0;
    }
    return loss * inv_n;
  }

  const int k = model.config().components;
  if (k == 1) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = out(i, 0) - t(i);
      loss += r * r;
      if (d_out) (*d_out)(i, 0) = 2.0 * inv_n * r;
    }
    return loss * inv_n;
  }

  // Columns: k mixing logits, k means, k raw scales.
  constexpr double kLog2Pi = 1.8378770664093453;
  Eigen::VectorXd logw(k), lp(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto a = out.row(i).head(k);
    const double amax = a.maxCoeff();
    const double lse_a = amax + std::log((a.array() - amax).exp().sum());
    for (int c = 0; c < k; ++c) {
      const double s = softplus(out(i, 2 * k + c)) + 1e-6;
      const double r = (t(i) - out(i, k + c)) / s;
      logw(c) = a(c) - lse_a;
      lp(c) = logw(c) - 0.5 * kLog2Pi - std::log(s) - 0.5 * r * r;
    }
    const double lmax = lp.maxCoeff();
    const double lse = lmax + std::log((lp.array() - lmax).exp().sum());
    loss -= lse;
    if (d_out) {
      for (int c = 0; c < k; ++c) {
        const double gamma = std::exp(lp(c) - lse);
        const double s = softplus(out(i, 2 * k + c)) + 1e-6;
        const double r = t(i) - out(i, k + c);
        (*d_out)(i, c) = inv_n * (std::exp(logw(c)) - gamma);
        (*d_out)(i, k + c) = -inv_n * gamma * r / (s * s);
        (*d_out)(i, 2 * k + c) =
            -inv_n * gamma * (-1.0 / s + r * r / (s * s * s)) * sigmoid(out(i, 2 * k + c));
      }
    }
  }
  return loss * inv_n;
}

void check_binary_t(const Vector& t) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t(i) != 0.0 && t(i) != 1.0) throw ConfigError("binary treatment model needs t in {0, 1}");
  }
}

}  // namespace

TreatmentTrainResult train_treatment(const Dataset& ds, TreatmentModel& model, int epochs,
                                     int batch_size, OptimState& optim, Rng& rng) {
  if (epochs < 1) throw ConfigError("train_treatment: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train_treatment: batch_size must be >= 1");
  if (model.kind() == TreatmentModelKind::BinaryLogistic) check_binary_t(ds.t);
  const Matrix inputs = model.features()(ds);
  if (inputs.cols() != model.net().input_width()) {
    throw ConfigError("train_treatment: feature width " + std::to_string(inputs.cols()) +
                      " does not match the model input width " +
                      std::to_string(model.net().input_width()));
  }
  const Eigen::Index n = ds.size();
  const bool bn = model.config().batchnorm;
  if (bn && n < 2) throw ConfigError("train_treatment: batch-norm training needs at least 2 rows");

  TreatmentTrainResult result;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Matrix xb;
  Vector tb;
  Matrix d_out;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(0, static_cast<int>(i))]);
    }
    double total = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n; start += batch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + batch_size);
      const Eigen::Index m = stop - start;
      if (bn && m < 2) continue;  // batch statistics are undefined for one row
      xb.resize(m, inputs.cols());
      tb.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        xb.row(i) = inputs.row(order[start + i]);
        tb(i) = ds.t(order[start + i]);
      }
      const Matrix out = model.net().forward(xb, true);
      const double loss = loss_and_grad(model, out, tb, &d_out);
      if (!std::isfinite(loss)) {
        throw NumericalError("train_treatment: non-finite loss in epoch " + std::to_string(epoch), epoch);
      }
      total += loss * static_cast<double>(m);
      seen += m;
      optimizer_step(optim, model.net(), model.net().backward(d_out).params);
    }
    result.loss_trace.push_back(total / static_cast<double>(seen));
  }
  model.mark_trained();
  return result;
}

LossAndGrad treatment_output_loss(const TreatmentModel& model, const Matrix& out, const Vector& t) {
  LossAndGrad r;
  r.value = loss_and_grad(model, out, t, &r.d_output);
  return r;
}

double treatment_loss(const TreatmentModel& model, const Dataset& ds) {
  if (model.kind() == TreatmentModelKind::BinaryLogistic) check_binary_t(ds.t);
  const Matrix out = model.net().predict(model.features()(ds));
  return loss_and_grad(model, out, ds.t, nullptr);
}

Vector predict_propensity(const TreatmentModel& model, const Dataset& ds) {
  if (model.kind() != TreatmentModelKind::BinaryLogistic) {
    throw ConfigError("predict_propensity needs a binary treatment model");
  }
  const Matrix out = model.net().predict(model.features()(ds));
  return out.col(0).unaryExpr([](double a) { return clip_prob(sigmoid(a)); });
}

Vector predict_treatment(const TreatmentModel& model, const Dataset& ds) {
  if (model.kind() != TreatmentModelKind::ContinuousMean) {
    throw ConfigError("predict_treatment needs a continuous treatment model");
  }
  const Matrix out = model.net().predict(model.features()(ds));
  const int k = model.config().components;
  if (k == 1) return out.col(0);
  Vector mean(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto a = out.row(i).head(k);
    const Eigen::RowVectorXd w = (a.array() - a.maxCoeff()).exp().matrix();
    mean(i) = w.dot(out.row(i).segment(k, k)) / w.sum();
  }
  return mean;
}

}  // namespace cbiv
