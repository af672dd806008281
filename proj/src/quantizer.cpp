#include "nna/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nna/errors.hpp"
#include "nna/optimizer.hpp"

namespace nna {

std::string_view to_string(QuantScheme scheme) {
  switch (scheme) {
    case QuantScheme::Fp: return "fp";
    case QuantScheme::Multilevel: return "multilevel";
    case QuantScheme::Ternary: return "ternary";
    case QuantScheme::Binary: return "binary";
  }
  return "?";
}

QuantScheme quant_scheme_from_string(std::string_view name) {
  if (name == "fp") return QuantScheme::Fp;
  if (name == "multilevel") return QuantScheme::Multilevel;
  if (name == "ternary") return QuantScheme::Ternary;
  if (name == "binary") return QuantScheme::Binary;
  throw ParameterError("unknown quantization scheme '" + std::string(name) + "'");
}

QuantSpec QuantSpec::multilevel(int levels, double alpha) {
  QuantSpec s;
  s.scheme = QuantScheme::Multilevel;
  s.levels = levels;
  s.alpha = alpha;
  return s;
}

QuantSpec QuantSpec::ternary(double threshold) {
  QuantSpec s;
  s.scheme = QuantScheme::Ternary;
  s.levels = 3;
  s.ternary_threshold = threshold;
  return s;
}

QuantSpec QuantSpec::binary() {
  QuantSpec s;
  s.scheme = QuantScheme::Binary;
  s.levels = 2;
  return s;
}

void QuantSpec::validate() const {
  switch (scheme) {
    case QuantScheme::Fp: return;
    case QuantScheme::Multilevel:
      if (levels < 3 || levels % 2 == 0) {
        throw ParameterError("multilevel quantization needs an odd level count >= 3, got " + std::to_string(levels));
      }
      if (!(alpha > 0.0)) throw ParameterError("multilevel quantization needs alpha > 0");
      return;
    case QuantScheme::Ternary:
      if (!(ternary_threshold >= 0.0 && ternary_threshold < 1.0)) {
        throw ParameterError("ternary threshold factor must lie in [0, 1)");
      }
      return;
    case QuantScheme::Binary: return;
  }
}

int QuantSpec::levels_per_cell() const {
  switch (scheme) {
    case QuantScheme::Multilevel: return (levels + 1) / 2;
    case QuantScheme::Ternary:
    case QuantScheme::Binary: return 2;
    case QuantScheme::Fp: break;
  }
  throw EncodingError("full-precision weights have no cell-pair encoding");
}

double select_alpha(const Tensor& weights, double percentile) {
  if (weights.empty()) throw DegenerateInputError("select_alpha: empty weight matrix");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw ParameterError("select_alpha: percentile must lie in (0, 100]");
  }
  std::vector<double> mags(weights.size());
  std::transform(weights.values().begin(), weights.values().end(), mags.begin(), [](double w) { return std::fabs(w); });
  const auto n = mags.size();
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(rank - 1), mags.end());
  const double alpha = mags[rank - 1];
  if (alpha == 0.0) throw DegenerateInputError("select_alpha: percentile of |w| is zero (all-zero weights?)");
  return alpha;
}

namespace {

double ternary_scale(const Tensor& w, double threshold_factor, double& threshold) {
  double max_abs = 0.0;
  for (double v : w.values()) max_abs = std::max(max_abs, std::fabs(v));
  threshold = threshold_factor * max_abs;
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : w.values()) {
    if (std::fabs(v) > threshold) {
      sum += std::fabs(v);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double mean_abs(const Tensor& w) {
  double s = 0.0;
  for (double v : w.values()) s += std::fabs(v);
  return w.empty() ? 0.0 : s / static_cast<double>(w.size());
}

}  // namespace

double quantization_alpha(const Tensor& weights, const QuantSpec& spec) {
  switch (spec.scheme) {
    case QuantScheme::Fp: return 0.0;
    case QuantScheme::Multilevel: return spec.alpha;
    case QuantScheme::Ternary: {
      double threshold = 0.0;
      return ternary_scale(weights, spec.ternary_threshold, threshold);
    }
    case QuantScheme::Binary: return mean_abs(weights);
  }
  return 0.0;
}

double quantize_multilevel(double w, int levels, double alpha) {
  const int half = (levels - 1) / 2;
  const double c = std::clamp(w, -alpha, alpha);
  const double mag = std::fabs(c);
  const double t = mag / alpha * half;
  int lo = std::clamp(static_cast<int>(std::floor(t)), 0, half);
  int hi = std::min(lo + 1, half);
  const double vlo = alpha * (static_cast<double>(lo) / half);
  const double vhi = alpha * (static_cast<double>(hi) / half);
  // strict '<' sends exact midpoints to the level nearer zero
  const double v = (vhi - mag < mag - vlo) ? vhi : vlo;
  return c < 0.0 ? -v : v;
}

Tensor quantize(const Tensor& weights, const QuantSpec& spec) {
  spec.validate();
  Tensor out(weights.shape());
  switch (spec.scheme) {
    case QuantScheme::Fp: return weights;
    case QuantScheme::Multilevel:
      for (std::size_t i = 0; i < weights.size(); ++i) out[i] = quantize_multilevel(weights[i], spec.levels, spec.alpha);
      return out;
    case QuantScheme::Ternary: {
      double threshold = 0.0;
      const double scale = ternary_scale(weights, spec.ternary_threshold, threshold);
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        out[i] = std::fabs(w) > threshold ? (w < 0.0 ? -scale : scale) : 0.0;
      }
      return out;
    }
    case QuantScheme::Binary: {
      const double scale = mean_abs(weights);
      for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] < 0.0 ? -scale : scale;
      return out;
    }
  }
  return out;
}

int CellPairArray::level_index(double current) const {
  return static_cast<int>(std::lround(current * (levels_per_cell - 1)));
}

CellPairArray encode_cell_pair(const Tensor& quantized, const QuantSpec& spec) {
  spec.validate();
  const int cell_levels = spec.levels_per_cell();
  const int top = cell_levels - 1;
  double alpha = spec.alpha;
  if (spec.scheme != QuantScheme::Multilevel) {
    alpha = 0.0;
    for (double v : quantized.values()) alpha = std::max(alpha, std::fabs(v));
  }
  CellPairArray cells{Tensor(quantized.shape()), Tensor(quantized.shape()), cell_levels, alpha};
  for (std::size_t i = 0; i < quantized.size(); ++i) {
    const double w = quantized[i];
    if (w == 0.0) continue;
    if (alpha == 0.0) throw EncodingError("nonzero weight with zero full-scale alpha");
    const double t = std::fabs(w) / alpha * top;
    const long k = std::lround(t);
    const double current = static_cast<double>(k) / top;
    if (k < 0 || k > top || std::fabs(alpha * current - std::fabs(w)) > 1e-12 * alpha) {
      throw EncodingError("weight " + std::to_string(w) + " at index " + std::to_string(i) +
                          " is not on the " + std::to_string(2 * top + 1) + "-level grid of alpha " +
                          std::to_string(alpha));
    }
    (w > 0.0 ? cells.i_plus : cells.i_minus)[i] = current;
  }
  return cells;
}

Tensor decode_cell_pair(const CellPairArray& cells, const QuantSpec& spec) {
  require_same_shape(cells.i_plus, cells.i_minus, "decode_cell_pair");
  if (spec.on_grid_quantized() && spec.levels_per_cell() != cells.levels_per_cell) {
    throw EncodingError("cell level count does not match quantization spec");
  }
  Tensor w(cells.i_plus.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = cells.alpha * (cells.i_plus[i] - cells.i_minus[i]);
  return w;
}

Tensor quantized_training_step(QuantizedWeight& weight, const Tensor& gradient, Optimizer& optimizer,
                               std::size_t slot) {
  optimizer.update(slot, weight.shadow, gradient);
  return weight.forward_weights();
}

}  // namespace nna
