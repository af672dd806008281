#pragma once

#include <string_view>

#include "nna/tensor.hpp"

namespace nna {

class Optimizer;

enum class QuantScheme { Fp, Multilevel, Ternary, Binary };

std::string_view to_string(QuantScheme scheme);
QuantScheme quant_scheme_from_string(std::string_view name);

/// Clip range and level grid for one weight matrix. For MULTILEVEL the grid is
/// {-alpha, ..., -alpha/k, 0, alpha/k, ..., alpha} with k = (levels - 1) / 2.
/// TERNARY and BINARY derive their scale from the weights themselves.
struct QuantSpec {
  QuantScheme scheme = QuantScheme::Fp;
  int levels = 0;
  double alpha = 0.0;
  double ternary_threshold = 0.05;

  static QuantSpec fp() { return {}; }
  static QuantSpec multilevel(int levels, double alpha);
  static QuantSpec ternary(double threshold = 0.05);
  static QuantSpec binary();

  void validate() const;
  /// Number of current levels each cell of the pair must hold (7 -> 4, 15 -> 8, 3 -> 2).
  int levels_per_cell() const;
  bool on_grid_quantized() const { return scheme != QuantScheme::Fp; }

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// The given percentile (nearest-rank) of |w| over the matrix.
double select_alpha(const Tensor& weights, double percentile = 99.5);

/// Scale the quantized weights will use: spec.alpha for MULTILEVEL, the
/// threshold-mean for TERNARY, mean |w| for BINARY, 0 for FP.
double quantization_alpha(const Tensor& weights, const QuantSpec& spec);

Tensor quantize(const Tensor& weights, const QuantSpec& spec);
/// Nearest MULTILEVEL grid value with midpoint ties rounded toward zero.
double quantize_multilevel(double w, int levels, double alpha);

/// Per-weight (I+, I-) currents in units of the full-scale current I_fs,
/// which corresponds to `alpha`. At most one cell of each pair is on.
struct CellPairArray {
  Tensor i_plus;
  Tensor i_minus;
  int levels_per_cell = 0;
  double alpha = 0.0;

  /// Integer level index of a normalized current (0 .. levels_per_cell-1).
  int level_index(double current) const;
};

CellPairArray encode_cell_pair(const Tensor& quantized, const QuantSpec& spec);
Tensor decode_cell_pair(const CellPairArray& cells, const QuantSpec& spec);

/// FP shadow weights plus the quantization applied to them in the forward pass.
struct QuantizedWeight {
  Tensor shadow;
  QuantSpec spec;

  Tensor forward_weights() const { return quantize(shadow, spec); }
};

/// Applies one optimizer update to the shadow weights; the caller's next
/// forward pass must use quantize(updated shadow). Returns those weights.
Tensor quantized_training_step(QuantizedWeight& weight, const Tensor& gradient, Optimizer& optimizer,
                               std::size_t slot);

}  // namespace nna
