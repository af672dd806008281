#pragma once

#include <cstddef>
#include <vector>

#include "nna/dataset.hpp"
#include "nna/network.hpp"

namespace nna {

/// Which noise-injected nodes enter the generic penalty.
enum class PenaltyScope {
  AllNodes,              // every pre-activation that receives noise
  GatesAndCandidates,    // GRU gate and candidate pre-activations only
};

/// The smooth function a trained network computes with its noise switched off.
/// FP-sigmoid and NCN keep their form, SBN becomes sigmoid(s x), and step-type
/// activations throw ConfigurationError because they have no derivative.
ActivationSpec measurement_activation(const ActivationSpec& trained);

/// (sigma^2 / 2) * sum_i (dL/dx_i)^2 averaged over the examples of `sample`,
/// measured on a noise-free pass with `act` (default: the measurement
/// activation of the network's own training activation). L is the
/// per-example cross-entropy.
double penalty_generic(const NetworkGraph& net, const Dataset& sample, double sigma,
                       PenaltyScope scope = PenaltyScope::AllNodes, const ActivationSpec* act = nullptr,
                       std::size_t batch_size = 250);

/// Contribution of one GRU layer at one timestep, summed over units and
/// averaged over examples, with the sigma^2 / 2 prefactor applied.
struct PenaltyCell {
  std::size_t layer = 0;
  std::size_t timestep = 0;
  double pg = 0.0;
  double pc = 0.0;
};

struct PenaltyReport {
  double sigma = 0.0;
  std::size_t examples = 0;
  double pg = 0.0;
  double pc = 0.0;
  double total = 0.0;
  /// total / reference total; 1 until normalize() is called.
  double normalized_total = 1.0;
  std::vector<PenaltyCell> cells;  // ordered by (layer, timestep)
};

/// [(h_prev - c) f'(g~)]^2, the gate factor.
inline double pg_term(double h_prev, double candidate, double gate_slope) {
  const double v = (h_prev - candidate) * gate_slope;
  return v * v;
}

/// [(1 - g) f'(c~)]^2, the candidate factor.
inline double pc_term(double gate, double candidate_slope) {
  const double v = (1.0 - gate) * candidate_slope;
  return v * v;
}

/// (sigma^2 / 2) * sum_{i,t,l} (dL/dh_i^l<t>)^2 * (Pg + Pc) for a GRU stack,
/// where dL/dh is the full backpropagation-through-time derivative.
/// Throws ConfigurationError for non-GRU networks.
PenaltyReport penalty_gru(const NetworkGraph& net, const Dataset& sample, double sigma,
                          const ActivationSpec* act = nullptr, std::size_t batch_size = 250);

/// Sets report.normalized_total = report.total / reference.total.
void normalize(PenaltyReport& report, const PenaltyReport& reference);

}  // namespace nna
