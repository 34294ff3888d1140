#pragma once

#include <cstdint>

#include "cbiv/mlp.hpp"

namespace cbiv {

enum class OptimKind { SGD, Adam };

struct OptimConfig {
  OptimKind kind = OptimKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Optimizer state for one parameter set. Moment buffers are sized on the
// first step.
class OptimState {
 public:
  OptimState() = default;
  explicit OptimState(OptimConfig cfg);

  const OptimConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  std::uint64_t steps() const { return steps_; }

  // Throws NumericalError (params untouched) on non-finite gradients and
  // ConfigError on shape mismatch.
  void step(ParamSet& params, const ParamSet& grads);

 private:
  OptimConfig cfg_;
  ParamSet m_, v_;
  std::uint64_t steps_ = 0;
};

inline void optimizer_step(OptimState& state, Mlp& model, const ParamSet& grads) {
  state.step(model.params(), grads);
}

bool all_finite(const ParamSet& grads);

}  // namespace cbiv
