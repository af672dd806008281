#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nna/checkpoint.hpp"
#include "nna/dataset.hpp"
#include "nna/quantizer.hpp"

namespace nna {

/// Programming-error statistics of one memory technology. Standard deviations
/// are per programmed level, in units of the full-scale cell current I_fs.
struct EnvmProfile {
  std::string name = "IDEAL";
  int levels_per_cell = 4;
  std::vector<double> level_error_std{0.0, 0.0, 0.0, 0.0};

  /// PCM, RERAM, CMOS-MLC or IDEAL. Cells with a level count other than 4 get
  /// STDs interpolated linearly over the normalized current.
  static EnvmProfile preset(const std::string& name, int levels_per_cell = 4);
  /// The same technology resampled for cells with a different level count.
  EnvmProfile for_levels(int levels) const;
  void validate() const;
  bool ideal() const;
};

enum class Polarity { Fixed, Flipping };

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& name);

struct PimNoiseConfig {
  EnvmProfile profile;
  /// Sense-amp offset STD and white-noise STD, in units of I_fs.
  double offset_std = 0.0;
  double white_std = 0.0;
  Polarity polarity = Polarity::Flipping;

  void validate() const;
};

/// One crossbar: its programmed cell pairs, their static errors and the
/// static offset of each output column's sense-amp.
struct ArrayInstance {
  std::string name;
  CellPairArray cells;
  Tensor delta_plus;   // per-cell error, I_fs units, same shape as the weights
  Tensor delta_minus;
  Tensor offsets;      // [columns], I_fs units
  Tensor effective;    // q + alpha * (delta_plus - delta_minus), the analog weight
};

/// A fabricated chip. Everything static is drawn once here and never changes.
struct ChipInstance {
  NetworkGraph net;                // topology and digital parameters
  ForwardWeights weights;          // aligned with parameters(net); arrays hold analog weights
  std::vector<ArrayInstance> arrays;
  std::vector<std::size_t> array_of_param;  // parameter index -> array index, or npos
  PimNoiseConfig noise;
  std::uint64_t chip_seed = 0;

  /// CRC-32 over every static error and offset.
  std::uint32_t statics_checksum() const;
};

/// Encodes every in-array weight matrix to cell pairs and draws the static
/// errors. Throws EncodingError for weights that are not on a quantization grid.
ChipInstance fabricate(const Checkpoint& ckpt, const PimNoiseConfig& noise, std::uint64_t chip_seed);

/// +1 or -1: the sign applied to a sense-amp's offset in one comparison.
/// Depends only on (chip seed, sequence key, array, column, comparison index).
int polarity_sign(const ChipInstance& chip, std::uint64_t sequence_key, std::size_t array, std::size_t column,
                  std::size_t comparison);

/// Pre-activations as resolved by the sense-amps, and the resulting bits.
struct PimStep {
  Tensor gate_pre;
  Tensor candidate_pre;
  Tensor gate;
  Tensor candidate;
  Tensor h_next;
};

/// One GRU layer at one timestep for a batch of sequences (row b carries
/// sequence_keys[b]). Inputs must be binary. White noise is drawn from
/// streams derived from `noise` and the keys, so results do not depend on batching.
PimStep pim_gru_timestep(const ChipInstance& chip, std::size_t layer, const Tensor& h_prev, const Tensor& x_in,
                         std::size_t t, const std::vector<std::uint64_t>& sequence_keys, const RngStream& noise);

/// Predicted class of every example in `batch`; example b uses key first_key + b.
std::vector<int> pim_predict(const ChipInstance& chip, const Batch& batch, std::uint64_t first_key,
                             const RngStream& noise);
int pim_infer(const ChipInstance& chip, const Tensor& input, std::uint64_t sequence_key, const RngStream& noise);

/// Fraction of `data` classified correctly by the chip; example i uses key i.
double pim_accuracy(const ChipInstance& chip, const Dataset& data, const RngStream& noise,
                    std::size_t batch_size = 250);

struct ChipStudy {
  std::vector<std::uint64_t> chip_seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // sample STD; 0 when only one chip
  bool std_defined = false;
};

/// Fabricates num_chips chips with seeds base_seed, base_seed + 1, ... and
/// evaluates each on `data`. A chip's white noise comes from its own seed.
ChipStudy chip_population_study(const Checkpoint& ckpt, const PimNoiseConfig& noise, std::size_t num_chips,
                                const Dataset& data, std::uint64_t base_seed);

}  // namespace nna
