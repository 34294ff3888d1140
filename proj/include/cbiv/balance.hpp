#pragma once

#include "cbiv/mlp.hpp"
#include "cbiv/optimizer.hpp"

namespace cbiv {

enum class BalanceMetric { Wasserstein, ClubMi };

struct BalanceConfig {
  BalanceMetric metric = BalanceMetric::Wasserstein;
  // Entropic regularization relative to the median pairwise cost of the batch.
  double sinkhorn_epsilon = 0.1;
  int sinkhorn_iters = 50;
  int club_update_ratio = 1;
  double club_lr = 5e-4;
  int club_hidden = 64;

  void validate() const;
};

struct MetricValue {
  double value = 0.0;
  Matrix d_reps;  // d value / d reps, same shape as reps
};

// Entropic optimal-transport distance between the representation cloud
// weighted by (1 - p1) (arm 0) and by p1 (arm 1), squared-Euclidean cost.
// Sinkhorn is unrolled for `sinkhorn_iters` iterations and the result is
// averaged over both orientations, so the value is exactly symmetric in the
// arms. The returned gradient is exact for this unrolled function.
MetricValue weighted_wasserstein(const Matrix& reps, const Vector& p1, const BalanceConfig& cfg);

// Conditional Gaussian Q(t | c) = N(mu(c), sigma(c)^2) used by the CLUB
// mutual-information upper bound.
class ClubState {
 public:
  ClubState() = default;
  ClubState(int rep_width, const BalanceConfig& cfg, Rng& rng);

  int input_width() const { return mu_net_.input_width(); }

  struct Gaussian {
    Vector mu;
    Vector sigma;
  };
  Gaussian evaluate(const Matrix& reps) const;

  Mlp& mu_net() { return mu_net_; }
  Mlp& sigma_net() { return sigma_net_; }
  void set_learning_rate(double lr);
  std::uint64_t fit_steps() const { return mu_optim_.steps(); }

 private:
  friend MetricValue club_mi(const Matrix&, const Vector&, ClubState&);
  friend double club_fit_step(ClubState&, const Matrix&, const Vector&);

  Mlp mu_net_;
  Mlp sigma_net_;  // sigma = softplus(output)
  OptimState mu_optim_;
  OptimState sigma_optim_;
};

// (1/n^2) sum_i sum_j [log Q(t_i|c_i) - log Q(t_j|c_i)], gradient w.r.t.
// reps with Q held fixed.
MetricValue club_mi(const Matrix& reps, const Vector& t_hat, ClubState& state);

// One maximum-likelihood step of Q on the positive pairs. Returns the mean
// negative log-likelihood before the update.
double club_fit_step(ClubState& state, const Matrix& reps, const Vector& t_hat);

double softplus(double x);

}  // namespace cbiv
