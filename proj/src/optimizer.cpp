#include "cbiv/optimizer.hpp"

#include <cmath>

#include "cbiv/errors.hpp"

namespace cbiv {

OptimState::OptimState(OptimConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (cfg_.kind == OptimKind::Adam) {
    if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 > 0.0 && cfg_.beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in (0, 1)");
    }
    if (!(cfg_.epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  }
}

bool all_finite(const ParamSet& grads) {
  for (const auto& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

void OptimState::step(ParamSet& params, const ParamSet& grads) {
  if (grads.size() != params.size()) throw ConfigError("optimizer: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
      throw ConfigError("optimizer: gradient shape mismatch at tensor " + std::to_string(i));
    }
  }
  if (!all_finite(grads)) {
    throw NumericalError("optimizer: non-finite gradient", static_cast<long>(steps_));
  }

  ++steps_;
  const double lr = cfg_.learning_rate;
  if (cfg_.kind == OptimKind::SGD) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }

  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseAbs2();
    params[i].array() -= lr * (m_[i].array() / bc1) /
                         ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
  }
}

}  // namespace cbiv
