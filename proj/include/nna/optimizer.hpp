#pragma once

#include <cstddef>
#include <memory>
#include <string_view>
#include <vector>

#include "nna/tensor.hpp"

namespace nna {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Stateful first-order update rule. Each parameter tensor owns a slot whose
/// moment buffers are created lazily on first use.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void update(std::size_t slot, Tensor& param, const Tensor& grad) = 0;
  /// Marks the end of one optimization step across all slots.
  virtual void next_step() {}
  virtual void set_learning_rate(double lr) = 0;
};

class SgdOptimizer final : public Optimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  void update(std::size_t slot, Tensor& param, const Tensor& grad) override;
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

class AdamOptimizer final : public Optimizer {
 public:
  explicit AdamOptimizer(const OptimizerConfig& config) : cfg_(config) {}
  void update(std::size_t slot, Tensor& param, const Tensor& grad) override;
  void next_step() override { ++t_; }
  void set_learning_rate(double lr) override { cfg_.learning_rate = lr; }

 private:
  OptimizerConfig cfg_;
  long t_ = 1;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config);

}  // namespace nna
