#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include "cbiv/rng.hpp"

namespace cbiv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Flat list of parameter tensors; gradients use the same layout.
using ParamSet = std::vector<Matrix>;

enum class Activation { ReLU, ELU };

struct MlpSpec {
  // Input width first, then one entry per hidden layer.
  std::vector<int> layer_widths;
  Activation activation = Activation::ReLU;
  bool use_batchnorm = false;
  int output_width = 1;
  // Penalty (l2_decay / 2) * ||W||^2 on every dense weight matrix.
  double l2_decay = 0.0;
  // Apply the activation (no batch-norm) to the output layer as well.
  bool activate_output = false;

  int input_width() const { return layer_widths.empty() ? 0 : layer_widths.front(); }
  void validate() const;  // throws ConfigError
};

struct MlpGradients {
  ParamSet params;
  Matrix input;  // d loss / d batch
};

double elu(double x);
double relu(double x);

// Dense feed-forward network. Hidden layers are dense -> [batch-norm] ->
// activation; the output layer is dense only unless activate_output is set.
//
// Parameter layout per layer: W (in x out), b (1 x out), and for hidden
// layers with batch-norm: gamma (1 x out), beta (1 x out).
class Mlp {
 public:
  static constexpr double kBatchNormMomentum = 0.9;
  static constexpr double kBatchNormEps = 1e-5;

  Mlp() = default;
  Mlp(MlpSpec spec, Rng& rng);

  const MlpSpec& spec() const { return spec_; }
  int input_width() const { return spec_.input_width(); }
  int output_width() const { return spec_.output_width; }
  int num_layers() const { return static_cast<int>(layers_.size()); }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  Matrix& weight(int layer) { return params_[layers_[layer].w]; }
  Matrix& bias(int layer) { return params_[layers_[layer].b]; }
  const Matrix& weight(int layer) const { return params_[layers_[layer].w]; }
  const Matrix& bias(int layer) const { return params_[layers_[layer].b]; }
  // Indices into params() of the dense weight matrices (decay targets).
  std::vector<std::size_t> weight_indices() const;

  const Eigen::RowVectorXd& running_mean(int layer) const { return layers_[layer].running_mean; }
  const Eigen::RowVectorXd& running_var(int layer) const { return layers_[layer].running_var; }

  // Training mode with batch-norm uses batch statistics, updates the running
  // statistics and caches activations for backward().
  Matrix forward(const Matrix& batch, bool training);
  // Inference-mode evaluation; never touches the cache or running stats.
  Matrix predict(const Matrix& batch) const;

  // Gradients for the scalar loss whose output gradient is `upstream`,
  // including the weight-decay term. Requires a preceding training forward
  // on a batch with the same number of rows.
  MlpGradients backward(const Matrix& upstream) const;

  // (l2_decay / 2) * sum ||W||^2
  double decay_penalty() const;

  // Smallest |pre-activation| over hidden units in the last training
  // forward; used to keep finite differences away from ReLU kinks.
  double min_abs_preactivation() const;

  void zero_params();
  bool has_cache() const { return cache_valid_; }
  void clear_cache() { cache_valid_ = false; }

 private:
  struct Layer {
    int in = 0;
    int out = 0;
    bool hidden = false;
    bool activated = false;
    bool batchnorm = false;
    std::size_t w = 0, b = 0, gamma = 0, beta = 0;
    Eigen::RowVectorXd running_mean;
    Eigen::RowVectorXd running_var;
  };
  struct LayerCache {
    Matrix input;
    Matrix pre;     // activation input (after batch-norm when present)
    Matrix x_hat;   // normalized dense output
    Eigen::RowVectorXd inv_std;
  };

  Matrix run(const Matrix& batch, bool training, std::vector<LayerCache>* cache);

  MlpSpec spec_;
  std::vector<Layer> layers_;
  ParamSet params_;
  std::vector<LayerCache> cache_;
  bool cache_valid_ = false;
};

}  // namespace cbiv
