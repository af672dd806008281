#include "nna/penalty.hpp"

#include <algorithm>

#include "nna/errors.hpp"

namespace nna {
namespace {

void require_sample(const Dataset& sample, double sigma, std::size_t batch_size) {
  if (sample.size() == 0) throw ParameterError("penalty: empty dataset sample");
  if (!(sigma >= 0.0)) throw ParameterError("penalty: sigma must be nonnegative");
  if (batch_size == 0) throw ParameterError("penalty: batch_size must be positive");
}

ActivationSpec resolve(const NetworkGraph& net, const ActivationSpec* act) {
  const ActivationSpec a = act ? *act : measurement_activation(net.activation);
  if (!a.differentiable()) {
    throw ConfigurationError("penalty: activation '" + std::string(to_string(a.kind)) + "' has no derivative");
  }
  if (a.sigma_train != 0.0 || a.sigma_eval != 0.0) {
    throw ConfigurationError("penalty: the measurement pass must be noise-free");
  }
  return a;
}

struct Pass {
  NetworkTrace trace;
  NetworkBackward grads;
};

// Noise-free forward pass and the per-example gradients of every noise-injected node.
Pass measure(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch, const ActivationSpec& act) {
  RngStream unused(0);
  Pass p{forward(net, w, batch, act, unused), {}};
  std::vector<Tensor> param_grads;
  p.grads = backward(net, w, p.trace, batch, act, 1.0, param_grads);
  return p;
}

}  // namespace

ActivationSpec measurement_activation(const ActivationSpec& trained) {
  switch (trained.kind) {
    case ActivationKind::FpSigmoid:
      return ActivationSpec::fp_sigmoid(0.0);
    case ActivationKind::Ncn:
      return ActivationSpec::ncn(trained.tau, 0.0);
    case ActivationKind::Sbn:
      // the mean of an SBN is sigmoid(s x) = sigmoid(x / tau) with tau = 1 / s
      return ActivationSpec::ncn(1.0 / trained.slope, 0.0);
    default:
      throw ConfigurationError("penalty: activation '" + std::string(to_string(trained.kind)) +
                               "' is not differentiable");
  }
}

double penalty_generic(const NetworkGraph& net, const Dataset& sample, double sigma, PenaltyScope scope,
                       const ActivationSpec* act, std::size_t batch_size) {
  require_sample(sample, sigma, batch_size);
  const ActivationSpec a = resolve(net, act);
  if (scope == PenaltyScope::GatesAndCandidates && net.architecture() != Architecture::GruStack) {
    throw ConfigurationError("penalty: gate/candidate scope needs a GRU network");
  }
  const auto w = prepare_weights(net);
  double sum = 0.0;
  for (std::size_t b = 0; b < sample.size(); b += batch_size) {
    const Batch batch = sample.batch(b, std::min(sample.size(), b + batch_size));
    const Pass p = measure(net, w, batch, a);
    if (const auto* g = std::get_if<GruStackBackward>(&p.grads)) {
      if (scope == PenaltyScope::AllNodes)
        for (const auto& t : g->input_pre) sum += sum_of_squares(t);
      for (std::size_t t = 0; t < g->gate_pre.size(); ++t)
        for (std::size_t l = 0; l < g->gate_pre[t].size(); ++l)
          sum += sum_of_squares(g->gate_pre[t][l]) + sum_of_squares(g->candidate_pre[t][l]);
    } else {
      const auto& c = std::get<ConvNetBackward>(p.grads);
      for (const auto& t : c.conv_pre) sum += sum_of_squares(t);
      for (const auto& t : c.hidden_pre) sum += sum_of_squares(t);
    }
  }
  return 0.5 * sigma * sigma * sum / static_cast<double>(sample.size());
}

PenaltyReport penalty_gru(const NetworkGraph& net, const Dataset& sample, double sigma, const ActivationSpec* act,
                          std::size_t batch_size) {
  require_sample(sample, sigma, batch_size);
  if (net.architecture() != Architecture::GruStack) throw ConfigurationError("penalty_gru: network is not a GRU stack");
  const ActivationSpec a = resolve(net, act);
  const auto w = prepare_weights(net);
  const std::size_t layers = std::get<GruStack>(net.body).layers.size();

  PenaltyReport report;
  report.sigma = sigma;
  report.examples = sample.size();
  std::vector<double> pg, pc;  // [layer * T + t]
  std::size_t steps = 0;
  for (std::size_t b = 0; b < sample.size(); b += batch_size) {
    const Batch batch = sample.batch(b, std::min(sample.size(), b + batch_size));
    const Pass p = measure(net, w, batch, a);
    const auto& tr = std::get<GruStackTrace>(p.trace);
    const auto& g = std::get<GruStackBackward>(p.grads);
    if (pg.empty()) {
      steps = tr.steps.size();
      pg.assign(layers * steps, 0.0);
      pc.assign(layers * steps, 0.0);
    } else if (tr.steps.size() != steps) {
      throw ShapeError("penalty_gru: every sequence in the sample must have the same length");
    }
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t l = 0; l < layers; ++l) {
        const GruStepTrace& s = tr.steps[t][l];
        const Tensor& dh = g.d_hidden[t][l];
        double sum_g = 0.0, sum_c = 0.0;
        for (std::size_t i = 0; i < dh.size(); ++i) {
          const double d2 = dh[i] * dh[i];
          const double fg = activation_derivative(a, s.gate.pre_activation[i], 0.0);
          const double fc = activation_derivative(a, s.candidate.pre_activation[i], 0.0);
          sum_g += d2 * pg_term(s.h_prev[i], s.candidate.output[i], fg);
          sum_c += d2 * pc_term(s.gate.output[i], fc);
        }
        pg[l * steps + t] += sum_g;
        pc[l * steps + t] += sum_c;
      }
  }
  const double k = 0.5 * sigma * sigma / static_cast<double>(sample.size());
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t t = 0; t < steps; ++t) {
      PenaltyCell cell{l, t, k * pg[l * steps + t], k * pc[l * steps + t]};
      report.pg += cell.pg;
      report.pc += cell.pc;
      report.cells.push_back(cell);
    }
  report.total = report.pg + report.pc;
  return report;
}

void normalize(PenaltyReport& report, const PenaltyReport& reference) {
  if (!(reference.total > 0.0)) throw ParameterError("penalty: reference total must be positive to normalize");
  report.normalized_total = report.total / reference.total;
}

}  // namespace nna
