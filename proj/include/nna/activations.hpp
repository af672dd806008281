#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "nna/rng.hpp"
#include "nna/tensor.hpp"

namespace nna {

enum class ActivationKind {
  FpSigmoid,  // sigmoid(x + n_eval); the full-precision baseline neuron
  Ncn,        // noisy continuous neuron: sigmoid((x + n_train) / tau)
  Nbn,        // noisy binary neuron: step(x + n_eval)
  Sbn,        // stochastic binary neuron: Bernoulli(sigmoid(slope * x))
  Step,       // deployment neuron: step(x)
};

std::string_view to_string(ActivationKind kind);
ActivationKind activation_kind_from_string(std::string_view name);

struct ActivationSpec {
  ActivationKind kind = ActivationKind::FpSigmoid;
  double tau = 1.0;
  double sigma_train = 0.0;
  double sigma_eval = 0.0;
  double slope = 1.0;

  static ActivationSpec fp_sigmoid(double sigma_eval = 0.0);
  static ActivationSpec ncn(double tau, double sigma_train);
  static ActivationSpec nbn(double sigma_eval);
  static ActivationSpec sbn(double slope);
  static ActivationSpec step();

  /// Throws ParameterError when a hyperparameter violates the kind's constraints.
  void validate() const;
  bool differentiable() const;
  bool binary_output() const;

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

/// Record of one activation evaluation: the clean pre-activation x, the noise
/// sample actually drawn for each element, and the output.
struct ActivationTrace {
  Tensor pre_activation;
  Tensor noise_sample;
  Tensor output;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double sigmoid_prime(double z) {
  const double s = sigmoid(z);
  return s * (1.0 - s);
}

ActivationTrace ncn_forward(const Tensor& x, const ActivationSpec& spec, RngStream& rng);
Tensor ncn_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec);

Tensor nbn(const Tensor& x, const ActivationSpec& spec, RngStream& rng);

ActivationTrace sbn_forward(const Tensor& x, const ActivationSpec& spec, RngStream& rng);
/// Straight-through estimator: upstream * slope * sigmoid'(slope * x), independent of the sample.
Tensor ste_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec);

/// 1 where x > 0, else 0.
Tensor step(const Tensor& x);

/// Dispatch on spec.kind. Non-differentiable kinds still return a trace
/// (noise_sample holds n_eval for NBN, zeros for step).
ActivationTrace activate(const Tensor& x, const ActivationSpec& spec, RngStream& rng);
/// Local derivative chain for differentiable kinds; throws ConfigurationError otherwise.
Tensor activation_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec);

/// d output / d x at the recorded operating point, for differentiable kinds.
double activation_derivative(const ActivationSpec& spec, double x, double noise);

}  // namespace nna
