#pragma once

#include <cstdint>
#include <vector>

#include "cbiv/dataset.hpp"
#include "cbiv/mlp.hpp"
#include "cbiv/optimizer.hpp"
#include "cbiv/rng.hpp"

namespace cbiv {

struct LatentConfig {
  int m_l = 5;
  int m_e = 1;
  std::vector<int> hidden = {64, 64, 64};
  Activation activation = Activation::ELU;
  int epochs = 10;
  int batch_size = 200;
  double learning_rate = 1e-4;
  // Per X column: 0 for a Gaussian head, k >= 2 for a categorical head over
  // integer codes 0..k-1. Empty means every column is continuous.
  std::vector<int> x_categories;

  void validate() const;
};

// Sum_j 0.5 (sigma_j^2 + mu_j^2 - 1 - 2 ln sigma_j). Throws DomainError on
// sigma_j <= 0.
double kl_diag_gaussian(const Vector& mu, const Vector& sigma);

// log N(x; mu, sigma^2)
double gaussian_log_density(double x, double mu, double sigma);
// log softmax(logits)[k]
double categorical_log_prob(const Eigen::RowVectorXd& logits, int k);

// Variational encoder q(l | x, t) with decoders p(x | l^e), p(t | l^e) and
// p(y | t, l^e), where l^e = (l, e) and e is exogenous N(0, I) noise.
class LatentModel {
 public:
  LatentModel() = default;
  LatentModel(const LatentConfig& cfg, int m_x, TreatmentKind kind, Rng& rng);

  const LatentConfig& config() const { return cfg_; }
  int m_x() const { return m_x_; }
  TreatmentKind kind() const { return kind_; }
  int feature_width() const { return cfg_.m_l + cfg_.m_e; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  // Column standardization learned from the training data. Continuous
  // columns are centred and scaled; categorical ones are left alone.
  void fit_scaling(const Dataset& ds);

  // All trainable networks in a fixed order: mu_L, sigma_L, X heads, T
  // head, Y head.
  std::vector<Mlp*> networks();
  std::vector<const Mlp*> networks() const;

  struct Batch {
    Matrix enc_in;  // standardized (x, t)
    Matrix x;       // standardized x targets
    Vector t;       // t target (raw 0/1 for binary, standardized otherwise)
    Vector y;       // standardized y
  };
  Batch prepare(const Dataset& ds) const;

  struct Elbo {
    double value = 0.0;  // mean per-unit ELBO
    double reconstruction = 0.0;
    double kl = 0.0;
    std::vector<ParamSet> grads;  // gradients of -value, per network
  };
  // ELBO with explicit standard-normal draws eps_l (n x m_L) and
  // eps_e (n x m_E). Runs every network in training mode.
  Elbo elbo(const Batch& batch, const Matrix& eps_l, const Matrix& eps_e);

  // Posterior mean mu_L(x, t) followed by m_E zero columns.
  Matrix extract(const Dataset& ds) const;

 private:
  LatentConfig cfg_;
  int m_x_ = 0;
  TreatmentKind kind_ = TreatmentKind::Binary;
  std::vector<int> categories_;
  Mlp mu_net_;
  Mlp sigma_net_;
  std::vector<Mlp> x_heads_;
  Mlp t_head_;
  Mlp y_head_;
  Eigen::RowVectorXd x_mean_, x_scale_;
  double t_mean_ = 0.0, t_scale_ = 1.0;
  double y_mean_ = 0.0, y_scale_ = 1.0;
  bool trained_ = false;
};

struct LatentTrainResult {
  std::vector<double> elbo_trace;  // mean training ELBO per epoch
  bool small_sample_warning = false;
};

inline constexpr Eigen::Index kLatentRecommendedN = 5000;

// Maximizes the ELBO with Adam at cfg.learning_rate; every network has its
// own optimizer state. Throws NumericalError (with the epoch) on a
// non-finite ELBO.
LatentTrainResult train_latent(const Dataset& ds, LatentModel& model, Rng& rng);

// Throws StateError for an untrained model.
Matrix extract_latents(const LatentModel& model, const Dataset& ds);

}  // namespace cbiv
