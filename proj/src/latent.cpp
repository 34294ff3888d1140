#include "cbiv/latent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cbiv/balance.hpp"
#include "cbiv/errors.hpp"

namespace cbiv {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kSigmaFloor = 1e-6;

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double positive(double raw) { return softplus(raw) + kSigmaFloor; }

MlpSpec net_spec(int in, const LatentConfig& cfg, int out) {
  MlpSpec s;
  s.layer_widths.push_back(in);
  s.layer_widths.insert(s.layer_widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  s.activation = cfg.activation;
  s.output_width = out;
  return s;
}

// Accumulates -mean log N(target; out(:,0), positive(out(:,1))^2) into the
// output gradient and returns the summed log-likelihood.
double gaussian_head(const Matrix& out, const Vector& target, double inv_n, Matrix& d_out) {
  double ll = 0.0;
  d_out.resize(out.rows(), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out(i, 0);
    const double s = positive(out(i, 1));
    const double r = target(i) - m;
    ll += -0.5 * kLog2Pi - std::log(s) - 0.5 * r * r / (s * s);
    d_out(i, 0) = -inv_n * r / (s * s);
    d_out(i, 1) = -inv_n * (-1.0 / s + r * r / (s * s * s)) * sigmoid(out(i, 1));
  }
  return ll;
}

double categorical_head(const Matrix& out, const Vector& target, double inv_n, Matrix& d_out) {
  double ll = 0.0;
  d_out.resize(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Eigen::RowVectorXd row = out.row(i);
    const double mx = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - mx).exp().matrix();
    const double z = e.sum();
    const int k = static_cast<int>(target(i));
    ll += row(k) - mx - std::log(z);
    d_out.row(i) = inv_n * e / z;
    d_out(i, k) -= inv_n;
  }
  return ll;
}

double bernoulli_head(const Matrix& out, const Vector& target, double inv_n, Matrix& d_out) {
  double ll = 0.0;
  d_out.resize(out.rows(), 1);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double a = out(i, 0);
    ll += target(i) * a - softplus(a);
    d_out(i, 0) = -inv_n * (target(i) - sigmoid(a));
  }
  return ll;
}

LatentModel::Batch take_rows(const LatentModel::Batch& b, const std::vector<Eigen::Index>& rows) {
  LatentModel::Batch out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.enc_in.resize(n, b.enc_in.cols());
  out.x.resize(n, b.x.cols());
  out.t.resize(n);
  out.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.enc_in.row(i) = b.enc_in.row(rows[i]);
    out.x.row(i) = b.x.row(rows[i]);
    out.t(i) = b.t(rows[i]);
    out.y(i) = b.y(rows[i]);
  }
  return out;
}

}  // namespace

void LatentConfig::validate() const {
  if (m_l < 1) throw ConfigError("LatentConfig: m_L must be >= 1");
  if (m_e < 1) throw ConfigError("LatentConfig: m_E must be >= 1");
  if (epochs < 1) throw ConfigError("LatentConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("LatentConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("LatentConfig: learning rate must be > 0");
  for (int h : hidden)
    if (h < 1) throw ConfigError("LatentConfig: hidden widths must be >= 1");
  for (int k : x_categories)
    if (k != 0 && k < 2) throw ConfigError("LatentConfig: categorical columns need >= 2 levels");
}

double kl_diag_gaussian(const Vector& mu, const Vector& sigma) {
  if (mu.size() != sigma.size()) throw ConfigError("kl_diag_gaussian: size mismatch");
  double kl = 0.0;
  for (Eigen::Index j = 0; j < mu.size(); ++j) {
    if (!(sigma(j) > 0.0)) throw DomainError("kl_diag_gaussian: sigma must be positive");
    kl += 0.5 * (sigma(j) * sigma(j) + mu(j) * mu(j) - 1.0 - 2.0 * std::log(sigma(j)));
  }
  return kl;
}

double gaussian_log_density(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_log_density: sigma must be positive");
  const double r = (x - mu) / sigma;
  return -0.5 * kLog2Pi - std::log(sigma) - 0.5 * r * r;
}

double categorical_log_prob(const Eigen::RowVectorXd& logits, int k) {
  if (k < 0 || k >= logits.size()) throw DomainError("categorical_log_prob: level out of range");
  const double mx = logits.maxCoeff();
  return logits(k) - mx - std::log((logits.array() - mx).exp().sum());
}

LatentModel::LatentModel(const LatentConfig& cfg, int m_x, TreatmentKind kind, Rng& rng)
    : cfg_(cfg), m_x_(m_x), kind_(kind) {
  cfg_.validate();
  if (m_x < 1) throw ConfigError("LatentModel: need at least one X column");
  categories_ = cfg_.x_categories;
  if (categories_.empty()) categories_.assign(m_x, 0);
  if (static_cast<int>(categories_.size()) != m_x) {
    throw ConfigError("LatentModel: x_categories has " + std::to_string(categories_.size()) +
                      " entries for " + std::to_string(m_x) + " X columns");
  }
  const int le = cfg_.m_l + cfg_.m_e;
  mu_net_ = Mlp(net_spec(m_x + 1, cfg_, cfg_.m_l), rng);
  sigma_net_ = Mlp(net_spec(m_x + 1, cfg_, cfg_.m_l), rng);
  for (int j = 0; j < m_x; ++j) {
    x_heads_.emplace_back(net_spec(le, cfg_, categories_[j] == 0 ? 2 : categories_[j]), rng);
  }
  t_head_ = Mlp(net_spec(le, cfg_, kind == TreatmentKind::Binary ? 1 : 2), rng);
  y_head_ = Mlp(net_spec(le + 1, cfg_, 2), rng);
  x_mean_ = Eigen::RowVectorXd::Zero(m_x);
  x_scale_ = Eigen::RowVectorXd::Ones(m_x);
}

std::vector<Mlp*> LatentModel::networks() {
  std::vector<Mlp*> nets{&mu_net_, &sigma_net_};
  for (auto& h : x_heads_) nets.push_back(&h);
  nets.push_back(&t_head_);
  nets.push_back(&y_head_);
  return nets;
}

std::vector<const Mlp*> LatentModel::networks() const {
  std::vector<const Mlp*> nets{&mu_net_, &sigma_net_};
  for (const auto& h : x_heads_) nets.push_back(&h);
  nets.push_back(&t_head_);
  nets.push_back(&y_head_);
  return nets;
}

void LatentModel::fit_scaling(const Dataset& ds) {
  if (ds.x.cols() != m_x_) throw ConfigError("LatentModel: X width does not match the model");
  auto stats = [](const auto& col, double& mean, double& scale) {
    mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    scale = var > 1e-16 ? std::sqrt(var) : 1.0;
  };
  for (int j = 0; j < m_x_; ++j) {
    if (categories_[j] != 0) {
      x_mean_(j) = 0.0;
      x_scale_(j) = 1.0;
    } else {
      stats(ds.x.col(j), x_mean_(j), x_scale_(j));
    }
  }
  if (kind_ == TreatmentKind::Continuous) stats(ds.t, t_mean_, t_scale_);
  stats(ds.y, y_mean_, y_scale_);
}

LatentModel::Batch LatentModel::prepare(const Dataset& ds) const {
  if (ds.x.cols() != m_x_) throw ConfigError("LatentModel: X width does not match the model");
  if (ds.kind != kind_) throw ConfigError("LatentModel: treatment kind does not match the model");
  Batch b;
  b.x = (ds.x.rowwise() - x_mean_).array().rowwise() / x_scale_.array();
  for (int j = 0; j < m_x_; ++j) {
    if (categories_[j] == 0) continue;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      const double v = ds.x(i, j);
      if (v != std::floor(v) || v < 0 || v >= categories_[j]) {
        throw DomainError("LatentModel: categorical X column " + std::to_string(j) +
                          " has a value outside 0.." + std::to_string(categories_[j] - 1));
      }
    }
  }
  b.t = (ds.t.array() - t_mean_) / t_scale_;
  b.y = (ds.y.array() - y_mean_) / y_scale_;
  b.enc_in.resize(ds.size(), m_x_ + 1);
  b.enc_in.leftCols(m_x_) = b.x;
  b.enc_in.col(m_x_) = b.t;
  return b;
}

LatentModel::Elbo LatentModel::elbo(const Batch& batch, const Matrix& eps_l, const Matrix& eps_e) {
  const Eigen::Index n = batch.enc_in.rows();
  const int ml = cfg_.m_l, me = cfg_.m_e;
  if (eps_l.rows() != n || eps_l.cols() != ml || eps_e.rows() != n || eps_e.cols() != me) {
    throw ConfigError("LatentModel::elbo: noise draws have the wrong shape");
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  const Matrix mu = mu_net_.forward(batch.enc_in, true);
  const Matrix raw = sigma_net_.forward(batch.enc_in, true);
  const Matrix sigma = raw.unaryExpr([](double v) { return positive(v); });

  Matrix le(n, ml + me);
  le.leftCols(ml) = mu + sigma.cwiseProduct(eps_l);
  le.rightCols(me) = eps_e;

  Elbo out;
  const auto nets = networks();
  out.grads.resize(nets.size());
  Matrix d_le = Matrix::Zero(n, ml + me);
  double recon = 0.0;
  Matrix d_out;

  for (int j = 0; j < m_x_; ++j) {
    const Matrix o = x_heads_[j].forward(le, true);
    const Vector target = batch.x.col(j);
    recon += categories_[j] == 0 ? gaussian_head(o, target, inv_n, d_out)
                                 : categorical_head(o, target, inv_n, d_out);
    MlpGradients g = x_heads_[j].backward(d_out);
    out.grads[2 + j] = std::move(g.params);
    d_le += g.input;
  }
  {
    const Matrix o = t_head_.forward(le, true);
    recon += kind_ == TreatmentKind::Binary ? bernoulli_head(o, batch.t, inv_n, d_out)
                                            : gaussian_head(o, batch.t, inv_n, d_out);
    MlpGradients g = t_head_.backward(d_out);
    out.grads[2 + m_x_] = std::move(g.params);
    d_le += g.input;
  }
  {
    Matrix yin(n, ml + me + 1);
    yin.col(0) = batch.t;
    yin.rightCols(ml + me) = le;
    const Matrix o = y_head_.forward(yin, true);
    recon += gaussian_head(o, batch.y, inv_n, d_out);
    MlpGradients g = y_head_.backward(d_out);
    out.grads[3 + m_x_] = std::move(g.params);
    d_le += g.input.rightCols(ml + me);
  }

  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) kl += kl_diag_gaussian(mu.row(i).transpose(), sigma.row(i).transpose());

  const Matrix d_l = d_le.leftCols(ml);
  const Matrix d_mu = d_l + inv_n * mu;
  Matrix d_raw = d_l.cwiseProduct(eps_l) + inv_n * (sigma - sigma.cwiseInverse());
  d_raw.array() *= raw.unaryExpr([](double v) { return sigmoid(v); }).array();
  out.grads[0] = mu_net_.backward(d_mu).params;
  out.grads[1] = sigma_net_.backward(d_raw).params;

  out.reconstruction = recon * inv_n;
  out.kl = kl * inv_n;
  out.value = out.reconstruction - out.kl;
  return out;
}

Matrix LatentModel::extract(const Dataset& ds) const {
  const Batch b = prepare(ds);
  Matrix f = Matrix::Zero(ds.size(), feature_width());
  f.leftCols(cfg_.m_l) = mu_net_.predict(b.enc_in);
  return f;
}

LatentTrainResult train_latent(const Dataset& ds, LatentModel& model, Rng& rng) {
  const LatentConfig& cfg = model.config();
  const Eigen::Index n = ds.size();
  if (n < 1) throw ConfigError("train_latent: empty dataset");
  LatentTrainResult result;
  result.small_sample_warning = n < kLatentRecommendedN;

  model.fit_scaling(ds);
  const LatentModel::Batch all = model.prepare(ds);
  auto nets = model.networks();
  std::vector<OptimState> optims(nets.size(), OptimState({OptimKind::Adam, cfg.learning_rate}));

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(0, static_cast<int>(i))]);
    }
    double total = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + cfg.batch_size);
      std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + stop);
      const LatentModel::Batch b = take_rows(all, rows);
      Matrix eps_l(b.enc_in.rows(), cfg.m_l), eps_e(b.enc_in.rows(), cfg.m_e);
      for (Eigen::Index i = 0; i < eps_l.size(); ++i) eps_l.data()[i] = rng.normal();
      for (Eigen::Index i = 0; i < eps_e.size(); ++i) eps_e.data()[i] = rng.normal();
      LatentModel::Elbo e = model.elbo(b, eps_l, eps_e);
      if (!std::isfinite(e.value)) {
        throw NumericalError("train_latent: non-finite ELBO in epoch " + std::to_string(epoch), epoch);
      }
      total += e.value * static_cast<double>(stop - start);
      for (std::size_t k = 0; k < nets.size(); ++k) optimizer_step(optims[k], *nets[k], e.grads[k]);
    }
    result.elbo_trace.push_back(total / static_cast<double>(n));
  }
  model.mark_trained();
  return result;
}

Matrix extract_latents(const LatentModel& model, const Dataset& ds) {
  if (!model.trained()) throw StateError("extract_latents: latent model is not trained");
  return model.extract(ds);
}

}  // namespace cbiv
