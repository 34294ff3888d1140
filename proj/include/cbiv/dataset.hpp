#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbiv/mlp.hpp"

namespace cbiv {

enum class TreatmentKind { Binary, Continuous };

// Hidden ground truth; estimators never see these columns.
struct BinaryOracle {
  Vector mu0;
  Vector mu1;
  Vector propensity;
};

struct ContinuousOracle {
  Vector x1;
  Vector x2;
};

struct Dataset {
  Matrix z;  // n x m_Z (m_Z may be 0)
  Matrix x;  // n x m_X
  Vector t;
  Vector y;
  TreatmentKind kind = TreatmentKind::Binary;
  std::optional<BinaryOracle> binary_oracle;
  std::optional<ContinuousOracle> continuous_oracle;

  Eigen::Index size() const { return t.size(); }
  bool has_oracle() const { return binary_oracle.has_value() || continuous_oracle.has_value(); }

  Dataset select(const std::vector<Eigen::Index>& rows) const;
  Dataset without_oracle() const;
  // Throws ConfigError when columns disagree in length, binary t is not in
  // {0, 1}, or an oracle propensity is outside (0, 1).
  void validate() const;
};

Dataset concat(const Dataset& a, const Dataset& b);

struct SynConfig {
  int m_z = 2;
  int m_x = 4;
  int m_u = 4;
  Eigen::Index n = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DemandConfig {
  double gamma = 0.0;
  double lambda = 1.0;
  Eigen::Index n = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

// Generator internals that are never exported in a Dataset; tests use them
// as oracles.
struct SynInternals {
  Matrix u;
  Vector logit;
};

Dataset generate_syn(const SynConfig& cfg, SynInternals* internals = nullptr);
// True logging policy sigmoid(sum_{i<m_Z} z_i x_i + sum x_i + sum u_i).
double syn_propensity(const Eigen::RowVectorXd& z, const Eigen::RowVectorXd& x,
                      const Eigen::RowVectorXd& u);
Dataset generate_demand(const DemandConfig& cfg);

double demand_psi(double x2);
// Noise-free structural outcome 100 + (10 + t) x1 psi(x2) - 2 t.
double demand_structural(double t, double x1, double x2);

// Mean of mu1 - mu0. Throws UnavailableOracleError without a binary oracle.
double true_ate(const Dataset& ds);
// n x |t_grid| matrix of structural values. Throws UnavailableOracleError
// without a continuous oracle.
Matrix structural_truth(const Dataset& ds, const Vector& t_grid);

struct Split {
  Dataset train;
  Dataset valid;
  Dataset test;
};

// Seeded shuffle, then a disjoint partition with sizes round(f * n) for the
// first two parts and the remainder for the third.
Split split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

void write_csv(const Dataset& ds, const std::string& path);
Dataset read_csv(const std::string& path);

}  // namespace cbiv
