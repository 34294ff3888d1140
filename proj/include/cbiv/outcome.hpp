#pragma once

#include <memory>
#include <vector>

#include "cbiv/balance.hpp"
#include "cbiv/dataset.hpp"
#include "cbiv/mlp.hpp"
#include "cbiv/optimizer.hpp"
#include "cbiv/treatreg.hpp"

namespace cbiv {

struct OutcomeConfig {
  // Every representation layer is activated; its width is the last entry.
  std::vector<int> rep_hidden = {256, 256, 256};
  std::vector<int> head_hidden = {256, 256, 256, 256, 256};
  Activation activation = Activation::ELU;
  double alpha = 0.01;
  double head_decay = 1e-4;
  BalanceConfig balance;

  void validate() const;
};

struct EstimatorFlags {
  bool use_iv = true;       // false: stage 2 conditions on the observed t
  bool use_balance = true;  // false: alpha is forced to 0
};

// Representation f(features) with either two outcome heads h0, h1 (binary)
// or one head h(t, c) (continuous).
class OutcomeModel {
 public:
  OutcomeModel() = default;
  OutcomeModel(TreatmentKind kind, const OutcomeConfig& cfg, FeatureSource features, int input_width,
               Rng& rng);

  TreatmentKind kind() const { return kind_; }
  const OutcomeConfig& config() const { return cfg_; }
  const FeatureSource& features() const { return features_; }
  int rep_width() const { return rep_.output_width(); }

  Mlp& rep_net() { return rep_; }
  const Mlp& rep_net() const { return rep_; }
  // Binary: head(0), head(1). Continuous: head(0) only.
  Mlp& head(int t) { return heads_.at(t); }
  const Mlp& head(int t) const { return heads_.at(t); }
  int num_heads() const { return static_cast<int>(heads_.size()); }
  ClubState& club() { return club_; }

  // Affine map applied to t-hat before it enters the CLUB estimator; mutual
  // information is invariant to it.
  void set_club_scaling(double mean, double scale) {
    club_t_mean_ = mean;
    club_t_scale_ = scale;
  }
  double club_t_mean() const { return club_t_mean_; }
  double club_t_scale() const { return club_t_scale_; }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  // Inference-mode prediction from precomputed features.
  Vector predict_from_features(const Matrix& features, double t_query) const;
  // Per-row treatment values.
  Vector predict_from_features(const Matrix& features, const Vector& t_query) const;

 private:
  TreatmentKind kind_ = TreatmentKind::Binary;
  OutcomeConfig cfg_;
  FeatureSource features_;
  Mlp rep_;
  std::vector<Mlp> heads_;
  ClubState club_;
  double club_t_mean_ = 0.0, club_t_scale_ = 1.0;
  bool trained_ = false;
};

struct OutcomeStep {
  double l_y = 0.0;
  double l_c = 0.0;
  double total = 0.0;  // l_y + alpha * l_c
};

struct OutcomeGradients {
  ParamSet rep;
  std::vector<ParamSet> heads;
};

// Minibatch objective. `mix` is the propensity P(t = 1) per row (binary) or
// the treatment plugged into the head (continuous). Runs the networks in
// training mode; with `grads` the gradients of total (plus head decay) are
// filled. The CLUB network is held fixed.
OutcomeStep outcome_objective(OutcomeModel& model, const Matrix& features, const Vector& y,
                              const Vector& mix, double alpha, OutcomeGradients* grads);

struct OutcomeTrainResult {
  std::vector<OutcomeStep> trace;  // one entry per iteration
  int skipped_balance = 0;         // minibatches where one arm had no mass
};

// `iterations` minibatch updates with Adam (or SGD) on every network. With
// use_iv the stage-1 model supplies propensities / t-hat; without it the
// observed t is used and tm must be null.
OutcomeTrainResult train_outcome(const Dataset& ds, const TreatmentModel* tm, OutcomeModel& model,
                                 const EstimatorFlags& flags, int iterations, int batch_size,
                                 const OptimConfig& optim, Rng& rng);

// Stage-2 plug-in: propensity (binary) or t-hat (continuous), or the
// observed t when use_iv is off.
Vector stage1_mix(const Dataset& ds, const TreatmentModel* tm, const EstimatorFlags& flags);

// Binary: h^{t_query}(f(x)); continuous: h(t_query, f(x)).
Vector predict_counterfactual(const OutcomeModel& model, const Dataset& ds, double t_query);
Vector predict_counterfactual(const OutcomeModel& model, const Dataset& ds, const Vector& t_query);
double estimate_ate(const OutcomeModel& model, const Dataset& ds);
// Mean over units and grid points of (prediction - structural truth)^2.
double counterfactual_mse(const OutcomeModel& model, const Dataset& ds, const Vector& t_grid);

// `points` evenly spaced values between the 5th and 95th percentile of t.
Vector treatment_grid(const Vector& t, int points = 10);

}  // namespace cbiv
