#include "cbiv/mlp.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cbiv/errors.hpp"

namespace cbiv {

void MlpSpec::validate() const {
  if (layer_widths.empty()) throw ConfigError("MlpSpec: layer_widths must not be empty");
  for (int w : layer_widths) {
    if (w < 1) throw ConfigError("MlpSpec: layer widths must be >= 1");
  }
  if (output_width < 1) throw ConfigError("MlpSpec: output_width must be >= 1");
  if (!(l2_decay >= 0.0)) throw ConfigError("MlpSpec: l2_decay must be >= 0");
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double relu(double x) { return x > 0.0 ? x : 0.0; }

namespace {

double activation_grad(Activation act, double pre) {
  if (act == Activation::ReLU) return pre > 0.0 ? 1.0 : 0.0;
  return pre > 0.0 ? 1.0 : std::exp(pre);
}

void check_finite(const Matrix& m, int layer) {
  if (!m.allFinite()) {
    throw NumericalError("non-finite activation in layer " + std::to_string(layer), layer);
  }
}

}  // namespace

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  std::vector<int> widths = spec_.layer_widths;
  widths.push_back(spec_.output_width);
  const int n_layers = static_cast<int>(widths.size()) - 1;
  layers_.reserve(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.in = widths[l];
    layer.out = widths[l + 1];
    layer.hidden = l + 1 < n_layers;
    layer.activated = layer.hidden || spec_.activate_output;
    layer.batchnorm = layer.hidden && spec_.use_batchnorm;

    const double scale = spec_.activation == Activation::ReLU ? std::sqrt(2.0 / layer.in)
                                                              : std::sqrt(1.0 / layer.in);
    Matrix w(layer.in, layer.out);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
    layer.w = params_.size();
    params_.push_back(std::move(w));
    layer.b = params_.size();
    params_.push_back(Matrix::Zero(1, layer.out));
    if (layer.batchnorm) {
      layer.gamma = params_.size();
      params_.push_back(Matrix::Ones(1, layer.out));
      layer.beta = params_.size();
      params_.push_back(Matrix::Zero(1, layer.out));
      layer.running_mean = Eigen::RowVectorXd::Zero(layer.out);
      layer.running_var = Eigen::RowVectorXd::Ones(layer.out);
    }
    layers_.push_back(std::move(layer));
  }
}

std::vector<std::size_t> Mlp::weight_indices() const {
  std::vector<std::size_t> idx;
  for (const auto& layer : layers_) idx.push_back(layer.w);
  return idx;
}

void Mlp::zero_params() {
  for (const auto& layer : layers_) {
    params_[layer.w].setZero();
    params_[layer.b].setZero();
  }
}

Matrix Mlp::run(const Matrix& batch, bool training, std::vector<LayerCache>* cache) {
  if (batch.cols() != input_width()) {
    throw ConfigError("Mlp::forward: batch width " + std::to_string(batch.cols()) +
                      " != input width " + std::to_string(input_width()));
  }
  if (batch.rows() < 1) throw ConfigError("Mlp::forward: empty batch");
  if (training && spec_.use_batchnorm && batch.rows() < 2) {
    throw ConfigError("Mlp::forward: batch-norm training needs at least 2 rows");
  }
  if (cache) cache->assign(layers_.size(), LayerCache{});

  Matrix h = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    Matrix z = h * params_[layer.w];
    z.rowwise() += params_[layer.b].row(0);
    LayerCache* c = cache ? &(*cache)[l] : nullptr;
    if (c) c->input = std::move(h);

    if (layer.batchnorm) {
      const auto& gamma = params_[layer.gamma].row(0);
      const auto& beta = params_[layer.beta].row(0);
      Eigen::RowVectorXd mean, var;
      if (training) {
        mean = z.colwise().mean();
        var = (z.rowwise() - mean).array().square().colwise().mean();
        layer.running_mean = kBatchNormMomentum * layer.running_mean + (1.0 - kBatchNormMomentum) * mean;
        layer.running_var = kBatchNormMomentum * layer.running_var + (1.0 - kBatchNormMomentum) * var;
      } else {
        mean = layer.running_mean;
        var = layer.running_var;
      }
      Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEps).rsqrt();
      Matrix x_hat = (z.rowwise() - mean).array().rowwise() * inv_std.array();
      z = (x_hat.array().rowwise() * gamma.array()).matrix();
      z.rowwise() += beta;
      if (c) {
        c->x_hat = std::move(x_hat);
        c->inv_std = std::move(inv_std);
      }
    }

    if (layer.activated) {
      Matrix a = z;
      if (spec_.activation == Activation::ReLU) {
        a = a.cwiseMax(0.0);
      } else {
        a = a.unaryExpr([](double v) { return elu(v); });
      }
      if (c) c->pre = std::move(z);
      h = std::move(a);
    } else {
      h = std::move(z);
    }
    check_finite(h, static_cast<int>(l));
  }
  return h;
}

Matrix Mlp::forward(const Matrix& batch, bool training) {
  if (!training) return predict(batch);
  Matrix out = run(batch, true, &cache_);
  cache_valid_ = true;
  return out;
}

Matrix Mlp::predict(const Matrix& batch) const {
  // run() only mutates running statistics in training mode.
  return const_cast<Mlp*>(this)->run(batch, false, nullptr);
}

MlpGradients Mlp::backward(const Matrix& upstream) const {
  if (!cache_valid_) throw StateError("Mlp::backward called without a training forward pass");
  const Eigen::Index n = cache_.front().input.rows();
  if (upstream.rows() != n || upstream.cols() != output_width()) {
    throw StateError("Mlp::backward: upstream gradient does not match the cached forward batch");
  }

  MlpGradients g;
  g.params.resize(params_.size());
  Matrix d = upstream;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const Layer& layer = layers_[l];
    const LayerCache& c = cache_[l];
    if (layer.activated) {
      const Activation act = spec_.activation;
      d = d.cwiseProduct(c.pre.unaryExpr([act](double v) { return activation_grad(act, v); }));
    }
    if (layer.batchnorm) {
      const auto& gamma = params_[layer.gamma].row(0);
      g.params[layer.gamma] = d.cwiseProduct(c.x_hat).colwise().sum();
      g.params[layer.beta] = d.colwise().sum();
      Matrix dx_hat = d.array().rowwise() * gamma.array();
      Eigen::RowVectorXd sum_dx = dx_hat.colwise().sum();
      Eigen::RowVectorXd sum_dx_xhat = dx_hat.cwiseProduct(c.x_hat).colwise().sum();
      const double nn = static_cast<double>(n);
      Matrix dz = (nn * dx_hat.array()).rowwise() - sum_dx.array();
      dz.array() -= c.x_hat.array().rowwise() * sum_dx_xhat.array();
      dz.array().rowwise() *= (c.inv_std.array() / nn);
      d = std::move(dz);
    }
    g.params[layer.w] = c.input.transpose() * d;
    if (spec_.l2_decay > 0.0) g.params[layer.w] += spec_.l2_decay * params_[layer.w];
    g.params[layer.b] = d.colwise().sum();
    d = d * params_[layer.w].transpose();
  }
  g.input = std::move(d);
  return g;
}

double Mlp::decay_penalty() const {
  if (spec_.l2_decay == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& layer : layers_) s += params_[layer.w].squaredNorm();
  return 0.5 * spec_.l2_decay * s;
}

double Mlp::min_abs_preactivation() const {
  double m = std::numeric_limits<double>::infinity();
  if (!cache_valid_) return m;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!layers_[l].activated) continue;
    m = std::min(m, cache_[l].pre.cwiseAbs().minCoeff());
  }
  return m;
}

}  // namespace cbiv
