#include "cbiv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbiv/errors.hpp"
#include "cbiv/rng.hpp"

namespace cbiv {

namespace {

Matrix take_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector take(const Vector& v, const std::vector<Eigen::Index>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

Vector vstack(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Dataset Dataset::select(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.kind = kind;
  out.z = take_rows(z, rows);
  out.x = take_rows(x, rows);
  out.t = take(t, rows);
  out.y = take(y, rows);
  if (binary_oracle) {
    out.binary_oracle = BinaryOracle{take(binary_oracle->mu0, rows), take(binary_oracle->mu1, rows),
                                     take(binary_oracle->propensity, rows)};
  }
  if (continuous_oracle) {
    out.continuous_oracle =
        ContinuousOracle{take(continuous_oracle->x1, rows), take(continuous_oracle->x2, rows)};
  }
  return out;
}

Dataset Dataset::without_oracle() const {
  Dataset out = *this;
  out.binary_oracle.reset();
  out.continuous_oracle.reset();
  return out;
}

void Dataset::validate() const {
  const Eigen::Index n = size();
  if (z.rows() != n || x.rows() != n || y.size() != n) {
    throw ConfigError("Dataset: column lengths disagree");
  }
  if (kind == TreatmentKind::Binary) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (t(i) != 0.0 && t(i) != 1.0) throw ConfigError("Dataset: binary treatment outside {0, 1}");
    }
  }
  if (binary_oracle) {
    if (binary_oracle->mu0.size() != n || binary_oracle->mu1.size() != n ||
        binary_oracle->propensity.size() != n) {
      throw ConfigError("Dataset: oracle column lengths disagree");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = binary_oracle->propensity(i);
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("Dataset: oracle propensity outside (0, 1)");
    }
  }
  if (continuous_oracle && (continuous_oracle->x1.size() != n || continuous_oracle->x2.size() != n)) {
    throw ConfigError("Dataset: oracle column lengths disagree");
  }
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.kind != b.kind || a.z.cols() != b.z.cols() || a.x.cols() != b.x.cols() ||
      a.binary_oracle.has_value() != b.binary_oracle.has_value() ||
      a.continuous_oracle.has_value() != b.continuous_oracle.has_value()) {
    throw ConfigError("concat: incompatible datasets");
  }
  Dataset out;
  out.kind = a.kind;
  out.z = vstack(a.z, b.z);
  out.x = vstack(a.x, b.x);
  out.t = vstack(a.t, b.t);
  out.y = vstack(a.y, b.y);
  if (a.binary_oracle) {
    out.binary_oracle = BinaryOracle{vstack(a.binary_oracle->mu0, b.binary_oracle->mu0),
                                     vstack(a.binary_oracle->mu1, b.binary_oracle->mu1),
                                     vstack(a.binary_oracle->propensity, b.binary_oracle->propensity)};
  }
  if (a.continuous_oracle) {
    out.continuous_oracle = ContinuousOracle{vstack(a.continuous_oracle->x1, b.continuous_oracle->x1),
                                             vstack(a.continuous_oracle->x2, b.continuous_oracle->x2)};
  }
  return out;
}

void SynConfig::validate() const {
  if (m_z < 1 || m_x < 1 || m_u < 0) throw ConfigError("SynConfig: dimensions must be positive");
  if (m_x <= m_z) throw ConfigError("SynConfig: m_X must exceed m_Z");
  if (n < 1) throw ConfigError("SynConfig: n must be >= 1");
}

void DemandConfig::validate() const {
  if (n < 1) throw ConfigError("DemandConfig: n must be >= 1");
  if (!std::isfinite(gamma) || !std::isfinite(lambda)) throw ConfigError("DemandConfig: non-finite knob");
}

double syn_propensity(const Eigen::RowVectorXd& z, const Eigen::RowVectorXd& x,
                      const Eigen::RowVectorXd& u) {
  double arg = x.sum() + u.sum();
  for (Eigen::Index j = 0; j < z.size(); ++j) arg += z(j) * x(j);
  return sigmoid(arg);
}

Dataset generate_syn(const SynConfig& cfg, SynInternals* internals) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Eigen::Index n = cfg.n;
  const int mxu = cfg.m_x + cfg.m_u;
  // (X, U) ~ N(0, 0.95 I + 0.05 J): independent parts plus one shared factor.
  const double own = std::sqrt(0.95), shared = std::sqrt(0.05);

  Dataset ds;
  ds.kind = TreatmentKind::Binary;
  ds.z.resize(n, cfg.m_z);
  ds.x.resize(n, cfg.m_x);
  ds.t.resize(n);
  ds.y.resize(n);
  BinaryOracle oracle{Vector(n), Vector(n), Vector(n)};
  Matrix u(n, cfg.m_u);
  Vector logit(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < cfg.m_z; ++j) ds.z(i, j) = rng.normal();
    const double s = rng.normal();
    for (int j = 0; j < mxu; ++j) {
      const double v = own * rng.normal() + shared * s;
      if (j < cfg.m_x) ds.x(i, j) = v;
      else u(i, j - cfg.m_x) = v;
    }
    double arg = 0.0, sq = 0.0, lin = 0.0;
    for (int j = 0; j < cfg.m_z; ++j) arg += ds.z(i, j) * ds.x(i, j);
    for (int j = 0; j < cfg.m_x; ++j) {
      arg += ds.x(i, j);
      sq += ds.x(i, j) * ds.x(i, j);
      lin += ds.x(i, j);
    }
    for (int j = 0; j < cfg.m_u; ++j) {
      arg += u(i, j);
      sq += u(i, j) * u(i, j);
      lin += u(i, j);
    }
    const double p = sigmoid(arg);
    const double t = rng.bernoulli(p) ? 1.0 : 0.0;
    oracle.mu1(i) = sq / mxu;
    oracle.mu0(i) = lin / mxu;
    oracle.propensity(i) = std::clamp(p, 1e-300, 1.0 - 1e-16);
    logit(i) = arg;
    ds.t(i) = t;
    ds.y(i) = t * oracle.mu1(i) + (1.0 - t) * oracle.mu0(i);
  }
  ds.binary_oracle = std::move(oracle);
  if (internals) {
    internals->u = std::move(u);
    internals->logit = std::move(logit);
  }
  return ds;
}

double demand_psi(double x2) {
  const double d = x2 - 5.0;
  return 2.0 * (d * d * d * d / 600.0 + std::exp(-4.0 * d * d) + x2 / 10.0 - 2.0);
}

double demand_structural(double t, double x1, double x2) {
  return 100.0 + (10.0 + t) * x1 * demand_psi(x2) - 2.0 * t;
}

Dataset generate_demand(const DemandConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Eigen::Index n = cfg.n;
  Dataset ds;
  ds.kind = TreatmentKind::Continuous;
  ds.z.resize(n, 1);
  ds.x.resize(n, 2);
  ds.t.resize(n);
  ds.y.resize(n);
  ContinuousOracle oracle{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x1 = rng.uniform_int(1, 7);
    const double x2 = rng.uniform(0.0, 10.0);
    const double z = rng.normal();
    const double u = rng.normal();
    const double e = rng.normal(0.5 * u, 0.75);
    const double psi = demand_psi(x2);
    const double t = 25.0 + cfg.gamma * z + (cfg.lambda * z + 3.0) * psi + u;
    ds.z(i, 0) = z;
    ds.x(i, 0) = x1;
    ds.x(i, 1) = x2;
    ds.t(i) = t;
    ds.y(i) = demand_structural(t, x1, x2) + e;
    oracle.x1(i) = x1;
    oracle.x2(i) = x2;
  }
  ds.continuous_oracle = std::move(oracle);
  return ds;
}

double true_ate(const Dataset& ds) {
  if (!ds.binary_oracle) throw UnavailableOracleError("true_ate: dataset carries no binary oracle");
  return (ds.binary_oracle->mu1 - ds.binary_oracle->mu0).mean();
}

Matrix structural_truth(const Dataset& ds, const Vector& t_grid) {
  if (!ds.continuous_oracle) {
    throw UnavailableOracleError("structural_truth: dataset carries no continuous oracle");
  }
  const auto& o = *ds.continuous_oracle;
  Matrix out(ds.size(), t_grid.size());
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    for (Eigen::Index g = 0; g < t_grid.size(); ++g) out(i, g) = demand_structural(t_grid(g), o.x1(i), o.x2(i));
  return out;
}

Split split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split: every fraction must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  const Eigen::Index n = ds.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  // Fisher-Yates with our own draws so the permutation is library-independent.
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const auto n_train = static_cast<Eigen::Index>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train,
                                static_cast<Eigen::Index>(std::llround(fractions[1] * static_cast<double>(n))));
  auto part = [&](Eigen::Index from, Eigen::Index to) {
    return ds.select(std::vector<Eigen::Index>(order.begin() + from, order.begin() + to));
  };
  return Split{part(0, n_train), part(n_train, n_train + n_valid), part(n_train + n_valid, n)};
}

}  // namespace cbiv
