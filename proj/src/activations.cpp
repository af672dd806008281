#include "nna/activations.hpp"

#include <cmath>

#include "nna/errors.hpp"

namespace nna {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::FpSigmoid: return "fp-sigmoid";
    case ActivationKind::Ncn: return "ncn";
    case ActivationKind::Nbn: return "nbn";
    case ActivationKind::Sbn: return "sbn";
    case ActivationKind::Step: return "step";
  }
  return "?";
}

ActivationKind activation_kind_from_string(std::string_view name) {
  if (name == "fp-sigmoid") return ActivationKind::FpSigmoid;
  if (name == "ncn") return ActivationKind::Ncn;
  if (name == "nbn") return ActivationKind::Nbn;
  if (name == "sbn") return ActivationKind::Sbn;
  if (name == "step") return ActivationKind::Step;
  throw ParameterError("unknown activation kind '" + std::string(name) + "'");
}

ActivationSpec ActivationSpec::fp_sigmoid(double sigma_eval) {
  ActivationSpec s;
  s.kind = ActivationKind::FpSigmoid;
  s.sigma_eval = sigma_eval;
  return s;
}

ActivationSpec ActivationSpec::ncn(double tau, double sigma_train) {
  ActivationSpec s;
  s.kind = ActivationKind::Ncn;
  s.tau = tau;
  s.sigma_train = sigma_train;
  return s;
}

ActivationSpec ActivationSpec::nbn(double sigma_eval) {
  ActivationSpec s;
  s.kind = ActivationKind::Nbn;
  s.sigma_eval = sigma_eval;
  return s;
}

ActivationSpec ActivationSpec::sbn(double slope) {
  ActivationSpec s;
  s.kind = ActivationKind::Sbn;
  s.slope = slope;
  return s;
}

ActivationSpec ActivationSpec::step() {
  ActivationSpec s;
  s.kind = ActivationKind::Step;
  return s;
}

void ActivationSpec::validate() const {
  if (!(sigma_train >= 0.0)) throw ParameterError("sigma_train must be >= 0");
  if (!(sigma_eval >= 0.0)) throw ParameterError("sigma_eval must be >= 0");
  if (kind == ActivationKind::Ncn && !(tau > 0.0)) throw ParameterError("NCN requires tau > 0");
  if (kind == ActivationKind::Sbn && !(slope > 0.0)) throw ParameterError("SBN requires slope > 0");
}

bool ActivationSpec::differentiable() const {
  return kind == ActivationKind::FpSigmoid || kind == ActivationKind::Ncn || kind == ActivationKind::Sbn;
}

bool ActivationSpec::binary_output() const {
  return kind == ActivationKind::Nbn || kind == ActivationKind::Sbn || kind == ActivationKind::Step;
}

namespace {

void require_kind(const ActivationSpec& spec, ActivationKind kind, const char* op) {
  if (spec.kind != kind) {
    throw ConfigurationError(std::string(op) + " called with activation kind " + std::string(to_string(spec.kind)));
  }
  spec.validate();
}

}  // namespace

ActivationTrace ncn_forward(const Tensor& x, const ActivationSpec& spec, RngStream& rng) {
  require_kind(spec, ActivationKind::Ncn, "ncn_forward");
  ActivationTrace t{x, gaussian(rng, 0.0, spec.sigma_train, x.shape()), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) t.output[i] = sigmoid((x[i] + t.noise_sample[i]) / spec.tau);
  return t;
}

Tensor ncn_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec) {
  require_kind(spec, ActivationKind::Ncn, "ncn_backward");
  require_same_shape(trace.pre_activation, upstream, "ncn_backward");
  Tensor g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = upstream[i] * sigmoid_prime((trace.pre_activation[i] + trace.noise_sample[i]) / spec.tau) / spec.tau;
  }
  return g;
}

Tensor nbn(const Tensor& x, const ActivationSpec& spec, RngStream& rng) {
  require_kind(spec, ActivationKind::Nbn, "nbn");
  Tensor out(x.shape());
  if (spec.sigma_eval == 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
    return out;
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + spec.sigma_eval * rng.normal() > 0.0 ? 1.0 : 0.0;
  return out;
}

ActivationTrace sbn_forward(const Tensor& x, const ActivationSpec& spec, RngStream& rng) {
  require_kind(spec, ActivationKind::Sbn, "sbn_forward");
  ActivationTrace t{x, Tensor(x.shape()), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    // noise_sample holds the uniform draw that decided the Bernoulli outcome
    const double u = rng.uniform();
    t.noise_sample[i] = u;
    t.output[i] = u < sigmoid(spec.slope * x[i]) ? 1.0 : 0.0;
  }
  return t;
}

Tensor ste_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec) {
  require_kind(spec, ActivationKind::Sbn, "ste_backward");
  require_same_shape(trace.pre_activation, upstream, "ste_backward");
  Tensor g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = upstream[i] * spec.slope * sigmoid_prime(spec.slope * trace.pre_activation[i]);
  }
  return g;
}

Tensor step(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

ActivationTrace activate(const Tensor& x, const ActivationSpec& spec, RngStream& rng) {
  spec.validate();
  switch (spec.kind) {
    case ActivationKind::Ncn: return ncn_forward(x, spec, rng);
    case ActivationKind::Sbn: return sbn_forward(x, spec, rng);
    case ActivationKind::FpSigmoid: {
      ActivationTrace t{x, gaussian(rng, 0.0, spec.sigma_eval, x.shape()), Tensor(x.shape())};
      for (std::size_t i = 0; i < x.size(); ++i) t.output[i] = sigmoid(x[i] + t.noise_sample[i]);
      return t;
    }
    case ActivationKind::Nbn: {
      ActivationTrace t{x, gaussian(rng, 0.0, spec.sigma_eval, x.shape()), Tensor(x.shape())};
      for (std::size_t i = 0; i < x.size(); ++i) t.output[i] = x[i] + t.noise_sample[i] > 0.0 ? 1.0 : 0.0;
      return t;
    }
    case ActivationKind::Step: return {x, Tensor(x.shape()), step(x)};
  }
  throw ConfigurationError("unreachable activation kind");
}

double activation_derivative(const ActivationSpec& spec, double x, double noise) {
  switch (spec.kind) {
    case ActivationKind::Ncn: return sigmoid_prime((x + noise) / spec.tau) / spec.tau;
    case ActivationKind::FpSigmoid: return sigmoid_prime(x + noise);
    case ActivationKind::Sbn: return spec.slope * sigmoid_prime(spec.slope * x);
    default:
      throw ConfigurationError("activation '" + std::string(to_string(spec.kind)) + "' has no gradient");
  }
}

Tensor activation_backward(const ActivationTrace& trace, const Tensor& upstream, const ActivationSpec& spec) {
  switch (spec.kind) {
    case ActivationKind::Ncn: return ncn_backward(trace, upstream, spec);
    case ActivationKind::Sbn: return ste_backward(trace, upstream, spec);
    case ActivationKind::FpSigmoid: {
      require_same_shape(trace.pre_activation, upstream, "fp_sigmoid_backward");
      Tensor g(upstream.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = upstream[i] * sigmoid_prime(trace.pre_activation[i] + trace.noise_sample[i]);
      }
      return g;
    }
    default:
      throw ConfigurationError("activation '" + std::string(to_string(spec.kind)) +
                               "' is not differentiable; train with ncn, fp-sigmoid or sbn");
  }
}

}  // namespace nna
