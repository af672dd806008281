#include "nna/optimizer.hpp"

#include <cmath>
#include <string>

#include "nna/errors.hpp"

namespace nna {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ParameterError("unknown optimizer '" + std::string(name) + "'");
}

void SgdOptimizer::update(std::size_t slot, Tensor& param, const Tensor& grad) {
  require_same_shape(param, grad, "sgd update");
  if (momentum_ == 0.0) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr_ * grad[i];
    return;
  }
  if (velocity_.size() <= slot) velocity_.resize(slot + 1);
  auto& v = velocity_[slot];
  if (v.shape() != param.shape()) v = Tensor(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    v[i] = momentum_ * v[i] + grad[i];
    param[i] -= lr_ * v[i];
  }
}

void AdamOptimizer::update(std::size_t slot, Tensor& param, const Tensor& grad) {
  require_same_shape(param, grad, "adam update");
  if (m_.size() <= slot) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  auto& m = m_[slot];
  auto& v = v_[slot];
  if (m.shape() != param.shape()) {
    m = Tensor(param.shape());
    v = Tensor(param.shape());
  }
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    param[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
  if (config.kind == OptimizerKind::Sgd) return std::make_unique<SgdOptimizer>(config.learning_rate, config.momentum);
  return std::make_unique<AdamOptimizer>(config);
}

}  // namespace nna
