#pragma once

#include <memory>
#include <vector>

#include "cbiv/dataset.hpp"
#include "cbiv/grad_check.hpp"
#include "cbiv/latent.hpp"
#include "cbiv/mlp.hpp"
#include "cbiv/optimizer.hpp"

namespace cbiv {

enum class ColumnSet { ZOnly, XOnly, ZAndX, Latent };

const char* to_string(ColumnSet c);

// Selects the estimator inputs from a dataset: raw Z/X columns or the
// posterior-mean features of a trained latent model.
struct FeatureSource {
  ColumnSet columns = ColumnSet::XOnly;
  std::shared_ptr<const LatentModel> latent;

  // Throws ConfigError when Latent is requested without a trained model.
  void validate() const;
  int width(const Dataset& ds) const;
  Matrix operator()(const Dataset& ds) const;
};

struct InputMode {
  ColumnSet stage1 = ColumnSet::ZAndX;
  ColumnSet stage2 = ColumnSet::XOnly;  // ZOnly is not allowed here

  void validate() const;
};

enum class TreatmentModelKind { BinaryLogistic, ContinuousMean };

struct TreatmentConfig {
  std::vector<int> hidden = {128, 64};
  Activation activation = Activation::ReLU;
  bool batchnorm = true;
  // Mixture components for the continuous head. K = 1 trains the mean
  // directly with squared error; K > 1 fits a Gaussian mixture by maximum
  // likelihood and predicts its mean.
  int components = 1;

  void validate() const;
};

class TreatmentModel {
 public:
  TreatmentModel() = default;
  TreatmentModel(TreatmentModelKind kind, const TreatmentConfig& cfg, FeatureSource features,
                 int input_width, Rng& rng);

  TreatmentModelKind kind() const { return kind_; }
  const TreatmentConfig& config() const { return cfg_; }
  const FeatureSource& features() const { return features_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  TreatmentModelKind kind_ = TreatmentModelKind::BinaryLogistic;
  TreatmentConfig cfg_;
  FeatureSource features_;
  Mlp net_;
  bool trained_ = false;
};

inline constexpr double kPropensityClip = 1e-7;

struct TreatmentTrainResult {
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

// Binary: cross-entropy of sigmoid(net) against t. Continuous: squared error
// of the mean head (K = 1) or mixture negative log-likelihood (K > 1).
// Throws NumericalError carrying the epoch on a non-finite loss.
TreatmentTrainResult train_treatment(const Dataset& ds, TreatmentModel& model, int epochs,
                                     int batch_size, OptimState& optim, Rng& rng);

// Mean loss of raw network outputs against t, with its output gradient.
LossAndGrad treatment_output_loss(const TreatmentModel& model, const Matrix& out, const Vector& t);

// Loss of the current model on ds in inference mode.
double treatment_loss(const TreatmentModel& model, const Dataset& ds);

// P(t = 1 | inputs) clipped to [1e-7, 1 - 1e-7].
Vector predict_propensity(const TreatmentModel& model, const Dataset& ds);
// Conditional mean of t given inputs.
Vector predict_treatment(const TreatmentModel& model, const Dataset& ds);

}  // namespace cbiv
