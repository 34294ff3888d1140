#include "cbiv/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "cbiv/errors.hpp"

namespace cbiv {

void BalanceConfig::validate() const {
  if (!(sinkhorn_epsilon > 0.0)) throw ConfigError("sinkhorn_epsilon must be > 0");
  if (sinkhorn_iters < 1) throw ConfigError("sinkhorn_iters must be >= 1");
  if (club_update_ratio < 1) throw ConfigError("club_update_ratio must be >= 1");
  if (!(club_lr > 0.0)) throw ConfigError("club_lr must be > 0");
  if (club_hidden < 1) throw ConfigError("club_hidden must be >= 1");
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SinkhornGrad {
  double value = 0.0;
  Matrix d_cost;
  double d_eps = 0.0;
};

// Unrolled Sinkhorn scaling from v = 1; rows carry `a`, columns `b`.
SinkhornGrad sinkhorn(const Matrix& cost, const Vector& a, const Vector& b, double eps,
                      int iters) {
  const Eigen::Index na = cost.rows(), nb = cost.cols();
  const Matrix kernel = (-cost / eps).array().exp().matrix();

  Matrix us(na, iters), kvs(na, iters), vs(nb, iters + 1), ktus(nb, iters);
  vs.col(0).setOnes();
  for (int k = 0; k < iters; ++k) {
    kvs.col(k) = kernel * vs.col(k);
    us.col(k) = a.cwiseQuotient(kvs.col(k));
    ktus.col(k) = kernel.transpose() * us.col(k);
    vs.col(k + 1) = b.cwiseQuotient(ktus.col(k));
  }
  const Vector u = us.col(iters - 1);
  const Vector v = vs.col(iters);
  if (!u.allFinite() || !v.allFinite()) {
    throw NumericalError("weighted_wasserstein: Sinkhorn scaling overflowed");
  }

  SinkhornGrad out;
  const Matrix plan = u.asDiagonal() * kernel * v.asDiagonal();
  out.value = plan.cwiseProduct(cost).sum();

  const Matrix kc = kernel.cwiseProduct(cost);
  Matrix d_kernel = (u * v.transpose()).cwiseProduct(cost);
  Vector du = kc * v;
  Vector dv = kc.transpose() * u;
  // Rank-one contributions to d_kernel, accumulated as two products.
  Matrix row_left(na, iters), row_right(nb, iters), col_left(na, iters), col_right(nb, iters);
  for (int k = iters - 1; k >= 0; --k) {
    const Vector d_ktu = -dv.cwiseProduct(vs.col(k + 1)).cwiseQuotient(ktus.col(k));
    du += kernel * d_ktu;
    row_left.col(k) = us.col(k);
    row_right.col(k) = d_ktu;
    const Vector d_kv = -du.cwiseProduct(us.col(k)).cwiseQuotient(kvs.col(k));
    dv = kernel.transpose() * d_kv;
    col_left.col(k) = d_kv;
    col_right.col(k) = vs.col(k);
    du.setZero();
  }
  d_kernel.noalias() += row_left * row_right.transpose();
  d_kernel.noalias() += col_left * col_right.transpose();

  const Matrix dk_k = d_kernel.cwiseProduct(kernel);
  out.d_cost = plan - dk_k / eps;
  out.d_eps = dk_k.cwiseProduct(cost).sum() / (eps * eps);
  return out;
}

}  // namespace

MetricValue weighted_wasserstein(const Matrix& reps, const Vector& p1, const BalanceConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = reps.rows();
  if (n < 2) throw ConfigError("weighted_wasserstein: need at least 2 rows");
  if (p1.size() != n) throw ConfigError("weighted_wasserstein: p1 length mismatch");

  std::vector<Eigen::Index> rows0, rows1;
  double mass0 = 0.0, mass1 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = p1(i);
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("weighted_wasserstein: p1 outside [0, 1]");
    if (1.0 - p > 0.0) rows0.push_back(i);
    if (p > 0.0) rows1.push_back(i);
    mass0 += 1.0 - p;
    mass1 += p;
  }
  if (mass0 < 1e-12 || mass1 < 1e-12) {
    throw DegenerateArmError("weighted_wasserstein: one treatment arm carries no weight");
  }

  const Eigen::Index n0 = static_cast<Eigen::Index>(rows0.size());
  const Eigen::Index n1 = static_cast<Eigen::Index>(rows1.size());
  const Eigen::Index d = reps.cols();
  Matrix c0(n0, d), c1(n1, d);
  Vector a(n0), b(n1);
  for (Eigen::Index i = 0; i < n0; ++i) {
    c0.row(i) = reps.row(rows0[i]);
    a(i) = (1.0 - p1(rows0[i])) / mass0;
  }
  for (Eigen::Index j = 0; j < n1; ++j) {
    c1.row(j) = reps.row(rows1[j]);
    b(j) = p1(rows1[j]) / mass1;
  }

  const Vector sq0 = c0.rowwise().squaredNorm();
  const Vector sq1 = c1.rowwise().squaredNorm();
  Matrix cost = -2.0 * c0 * c1.transpose();
  cost.colwise() += sq0;
  cost.rowwise() += sq1.transpose();
  cost = cost.cwiseMax(0.0);

  MetricValue out;
  out.d_reps = Matrix::Zero(n, d);

  // eps = scale * (lower median of the cost entries), or the mean when the
  // median vanishes.
  std::vector<double> entries(cost.data(), cost.data() + cost.size());
  const std::size_t mid = (entries.size() - 1) / 2;
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(mid), entries.end());
  const double median = entries[mid];
  const double mean = cost.mean();
  if (mean <= 1e-300) return out;  // every pair coincides
  const bool use_median = median > 1e-12;
  const double eps = cfg.sinkhorn_epsilon * (use_median ? median : mean);

  const SinkhornGrad fwd = sinkhorn(cost, a, b, eps, cfg.sinkhorn_iters);
  const SinkhornGrad rev = sinkhorn(cost.transpose(), b, a, eps, cfg.sinkhorn_iters);
  out.value = 0.5 * (fwd.value + rev.value);
  Matrix d_cost = 0.5 * (fwd.d_cost + rev.d_cost.transpose());
  const double d_eps = 0.5 * (fwd.d_eps + rev.d_eps);
  if (use_median) {
    for (Eigen::Index k = 0; k < cost.size(); ++k) {
      if (cost.data()[k] == median) {
        d_cost.data()[k] += cfg.sinkhorn_epsilon * d_eps;
        break;
      }
    }
  } else {
    d_cost.array() += cfg.sinkhorn_epsilon * d_eps / static_cast<double>(cost.size());
  }

  // cost_ij = |c0_i - c1_j|^2
  const Matrix d0 = 2.0 * (d_cost.rowwise().sum().asDiagonal() * c0 - d_cost * c1);
  const Matrix d1 = 2.0 * (d_cost.colwise().sum().transpose().asDiagonal() * c1 -
                           d_cost.transpose() * c0);
  for (Eigen::Index i = 0; i < n0; ++i) out.d_reps.row(rows0[i]) += d0.row(i);
  for (Eigen::Index j = 0; j < n1; ++j) out.d_reps.row(rows1[j]) += d1.row(j);
  return out;
}

ClubState::ClubState(int rep_width, const BalanceConfig& cfg, Rng& rng) {
  cfg.validate();
  MlpSpec spec{{rep_width, cfg.club_hidden}, Activation::ELU, false, 1, 0.0};
  mu_net_ = Mlp(spec, rng);
  sigma_net_ = Mlp(spec, rng);
  OptimConfig oc;
  oc.kind = OptimKind::Adam;
  oc.learning_rate = cfg.club_lr;
  mu_optim_ = OptimState(oc);
  sigma_optim_ = OptimState(oc);
}

void ClubState::set_learning_rate(double lr) {
  mu_optim_.set_learning_rate(lr);
  sigma_optim_.set_learning_rate(lr);
}

ClubState::Gaussian ClubState::evaluate(const Matrix& reps) const {
  Gaussian g;
  g.mu = mu_net_.predict(reps).col(0);
  g.sigma = sigma_net_.predict(reps).col(0).unaryExpr([](double x) { return softplus(x); });
  return g;
}

namespace {

void check_sigma(const Vector& sigma) {
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma(i) > 0.0) || !std::isfinite(sigma(i))) {
      throw NumericalError("CLUB: non-positive sigma", static_cast<long>(i));
    }
  }
}

}  // namespace

MetricValue club_mi(const Matrix& reps, const Vector& t_hat, ClubState& state) {
  if (reps.cols() != state.input_width()) throw ConfigError("club_mi: representation width mismatch");
  if (reps.rows() != t_hat.size()) throw ConfigError("club_mi: t_hat length mismatch");
  const Eigen::Index n = reps.rows();
  const Vector mu = state.mu_net_.forward(reps, true).col(0);
  const Vector raw = state.sigma_net_.forward(reps, true).col(0);
  const Vector sigma = raw.unaryExpr([](double x) { return softplus(x); });
  check_sigma(sigma);

  // The log sigma and constant terms cancel between the positive and the
  // all-pairs averages, leaving
  //   (1/n) sum_i [ ((tbar - mu_i)^2 + s^2 - (t_i - mu_i)^2) / (2 sigma_i^2) ].
  const double nn = static_cast<double>(n);
  const double t_bar = t_hat.mean();
  const double s2 = (t_hat.array() - t_bar).square().mean();
  const Vector inv_var = sigma.array().square().inverse();
  const Vector num = (t_bar - mu.array()).square() + s2 - (t_hat - mu).array().square();

  MetricValue out;
  out.value = 0.5 * num.cwiseProduct(inv_var).sum() / nn;

  // d/d mu_i: [-(tbar - mu_i) + (t_i - mu_i)] / sigma_i^2 / n = (t_i - tbar)/sigma_i^2/n
  Matrix d_mu = ((t_hat.array() - t_bar) * inv_var.array() / nn).matrix();
  // d/d sigma_i: -num_i / sigma_i^3 / n ; sigma = softplus(raw)
  Matrix d_raw = (-num.array() * inv_var.array() / sigma.array() / nn *
                  raw.unaryExpr([](double x) { return sigmoid(x); }).array())
                     .matrix();
  const MlpGradients gm = state.mu_net_.backward(d_mu);
  const MlpGradients gs = state.sigma_net_.backward(d_raw);
  out.d_reps = gm.input + gs.input;
  return out;
}

double club_fit_step(ClubState& state, const Matrix& reps, const Vector& t_hat) {
  if (reps.cols() != state.input_width()) throw ConfigError("club_fit_step: representation width mismatch");
  if (reps.rows() != t_hat.size()) throw ConfigError("club_fit_step: t_hat length mismatch");
  const double nn = static_cast<double>(reps.rows());
  const Vector mu = state.mu_net_.forward(reps, true).col(0);
  const Vector raw = state.sigma_net_.forward(reps, true).col(0);
  const Vector sigma = raw.unaryExpr([](double x) { return softplus(x); });
  check_sigma(sigma);

  const Vector resid = t_hat - mu;
  const Vector inv_var = sigma.array().square().inverse();
  const double nll = (0.5 * std::log(2.0 * std::numbers::pi) + sigma.array().log() +
                      0.5 * resid.array().square() * inv_var.array())
                         .mean();
  if (!std::isfinite(nll)) throw NumericalError("club_fit_step: non-finite NLL");

  Matrix d_mu = (-resid.array() * inv_var.array() / nn).matrix();
  Matrix d_raw = ((1.0 / sigma.array() - resid.array().square() * inv_var.array() / sigma.array()) /
                  nn * raw.unaryExpr([](double x) { return sigmoid(x); }).array())
                     .matrix();
  const MlpGradients gm = state.mu_net_.backward(d_mu);
  const MlpGradients gs = state.sigma_net_.backward(d_raw);
  if (!all_finite(gm.params) || !all_finite(gs.params)) {
    throw NumericalError("club_fit_step: non-finite gradient");
  }
  state.mu_optim_.step(state.mu_net_.params(), gm.params);
  state.sigma_optim_.step(state.sigma_net_.params(), gs.params);
  return nll;
}

}  // namespace cbiv
