#include "nna/pim.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "nna/errors.hpp"

namespace nna {
namespace {

constexpr std::size_t kNoArray = std::numeric_limits<std::size_t>::max();

// Stream tags under the chip seed. Each noise source has its own stream so
// that switching one source off leaves the draws of the others unchanged.
constexpr std::uint64_t kCellTag = 0x63656c6c;     // per-cell programming error
constexpr std::uint64_t kOffsetTag = 0x6f666673;   // sense-amp offsets
constexpr std::uint64_t kPolarityTag = 0x706f6c;   // comparison polarity bits

const std::vector<double>& preset_table(const std::string& name) {
  static const std::vector<double> pcm{0.01, 0.03, 0.03, 0.02};
  static const std::vector<double> reram{0.01, 0.025, 0.02, 0.015};
  static const std::vector<double> cmos{0.01, 0.015, 0.015, 0.01};
  static const std::vector<double> ideal{0.0, 0.0, 0.0, 0.0};
  if (name == "PCM") return pcm;
  if (name == "RERAM") return reram;
  if (name == "CMOS-MLC") return cmos;
  if (name == "IDEAL") return ideal;
  throw ParameterError("unknown eNVM profile '" + name + "' (expected PCM, RERAM, CMOS-MLC or IDEAL)");
}

// Linear interpolation of a per-level table over normalized current in [0, 1].
std::vector<double> resample(const std::vector<double>& table, int levels) {
  std::vector<double> out(static_cast<std::size_t>(levels));
  const double span = static_cast<double>(table.size() - 1);
  for (int j = 0; j < levels; ++j) {
    const double pos = levels == 1 ? 0.0 : span * j / (levels - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), table.size() - 2);
    const double frac = pos - static_cast<double>(lo);
    out[static_cast<std::size_t>(j)] = table[lo] + frac * (table[lo + 1] - table[lo]);
  }
  return out;
}

void require_binary(const Tensor& x, const char* what) {
  for (double v : x.values()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(what) + " must be binary, found " + std::to_string(v));
  }
}

RngStream polarity_stream(std::uint64_t chip_seed, std::uint64_t key, std::size_t array, std::size_t comparison) {
  return RngStream(chip_seed).substream({kPolarityTag, key, array, comparison});
}

// Adds the sense-amp offset and white noise of `array` to every column of row
// `row`, then resolves the comparison to a bit. `pre` is updated in place.
void sense(const ChipInstance& chip, std::size_t array, Tensor& pre, Tensor& bits, std::size_t row,
           std::uint64_t key, std::size_t comparison, const RngStream& noise) {
  const ArrayInstance& a = chip.arrays[array];
  const std::size_t cols = pre.cols();
  const double alpha = a.cells.alpha;
  const bool flipping = chip.noise.polarity == Polarity::Flipping;
  const bool has_offset = chip.noise.offset_std > 0.0;
  const bool has_white = chip.noise.white_std > 0.0;
  RngStream pol = polarity_stream(chip.chip_seed, key, array, comparison);
  RngStream white = noise.substream({key, array, comparison});
  std::uint64_t word = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    double& v = pre.at(row, j);
    if (has_offset) {
      if (j % 64 == 0 && flipping) word = pol.next_u64();
      const double sign = flipping && ((word >> (j % 64)) & 1u) ? -1.0 : 1.0;
      v += alpha * sign * a.offsets[j];
    }
    if (has_white) v += alpha * chip.noise.white_std * white.normal();
    bits.at(row, j) = v > 0.0 ? 1.0 : 0.0;
  }
}

Tensor timestep_rows(const Batch& batch, std::size_t t, std::size_t dim) {
  Tensor x({batch.size(), dim});
  for (std::size_t b = 0; b < batch.size(); ++b) std::copy_n(batch.inputs[b]->data() + t * dim, dim, x.data() + b * dim);
  return x;
}

std::vector<int> predict_gru(const ChipInstance& chip, const GruStack& g, const Batch& batch, std::uint64_t first_key,
                             const RngStream& noise) {
  const Tensor& first = *batch.inputs[0];
  if (first.rank() != 2 || first.dim(1) != g.input_dim()) throw ShapeError("pim: GRU input has the wrong shape");
  for (const auto* s : batch.inputs)
    if (s->shape() != first.shape()) throw ShapeError("pim: all sequences in a batch must share one length");
  const std::size_t T = first.dim(0), D = first.dim(1), B = batch.size();
  std::vector<std::uint64_t> keys(B);
  for (std::size_t b = 0; b < B; ++b) keys[b] = first_key + b;

  const auto& w = chip.weights;
  const std::size_t in_param = 0;
  const Tensor* in_bias = g.input.use_bias ? &w[1] : nullptr;
  const std::size_t in_array = chip.array_of_param[in_param];
  const std::size_t head = w.size() - 2;

  std::vector<Tensor> h(g.layers.size());
  for (std::size_t l = 0; l < g.layers.size(); ++l) h[l] = Tensor({B, g.layers[l].hidden_size});
  for (std::size_t t = 0; t < T; ++t) {
    Tensor pre = fc_preactivation(w[in_param], in_bias, timestep_rows(batch, t, D));
    Tensor x(pre.shape());
    for (std::size_t b = 0; b < B; ++b) sense(chip, in_array, pre, x, b, keys[b], t, noise);
    const Tensor* below = &x;
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      h[l] = pim_gru_timestep(chip, l, h[l], *below, t, keys, noise).h_next;
      below = &h[l];
    }
  }
  return argmax_rows(fc_preactivation(w[head], &w[head + 1], h.back()));
}

std::vector<int> predict_conv(const ChipInstance& chip, const ConvNet& c, const Batch& batch, std::uint64_t first_key,
                              const RngStream& noise) {
  const std::size_t B = batch.size(), width = c.in_c * c.in_h * c.in_w;
  Tensor x({B, width});
  for (std::size_t b = 0; b < B; ++b) {
    if (batch.inputs[b]->size() != width) throw ShapeError("pim: image has the wrong number of values");
    std::copy_n(batch.inputs[b]->data(), width, x.data() + b * width);
  }
  const auto gs = c.geometries();
  const auto& w = chip.weights;
  std::size_t idx = 0;
  for (std::size_t l = 0; l < c.convs.size(); ++l) {
    if (l > 0) require_binary(x, "conv input");
    const std::size_t array = chip.array_of_param[idx];
    const Tensor k = w[idx++].reshaped({gs[l].out_c, gs[l].patch_size()});
    Tensor pre = conv_preactivation(k, im2col(x, gs[l]));
    Tensor bits(pre.shape());
    const std::size_t P = gs[l].positions();
    // every output position is one comparison of the array's sense-amps
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < P; ++p) sense(chip, array, pre, bits, b * P + p, first_key + b, p, noise);
    // max over a window of bits is their OR
    x = pool_preactivation(bits, gs[l], B, nullptr);
  }
  for (const auto& fc : c.hidden) {
    if (!c.convs.empty() || idx > 0) require_binary(x, "fc input");
    const std::size_t array = chip.array_of_param[idx];
    const Tensor& wf = w[idx++];
    const Tensor* bf = fc.use_bias ? &w[idx++] : nullptr;
    Tensor pre = fc_preactivation(wf, bf, x);
    Tensor bits(pre.shape());
    for (std::size_t b = 0; b < B; ++b) sense(chip, array, pre, bits, b, first_key + b, 0, noise);
    x = std::move(bits);
  }
  return argmax_rows(fc_preactivation(w[idx], &w[idx + 1], x));
}

}  // namespace

EnvmProfile EnvmProfile::preset(const std::string& name, int levels_per_cell) {
  if (levels_per_cell < 2) throw ParameterError("eNVM profile needs at least 2 levels per cell");
  EnvmProfile p;
  p.name = name;
  p.levels_per_cell = levels_per_cell;
  p.level_error_std = resample(preset_table(name), levels_per_cell);
  return p;
}

EnvmProfile EnvmProfile::for_levels(int levels) const {
  validate();
  if (levels == levels_per_cell) return *this;
  if (levels < 2) throw ParameterError("eNVM profile needs at least 2 levels per cell");
  EnvmProfile p = *this;
  p.levels_per_cell = levels;
  p.level_error_std = resample(level_error_std, levels);
  return p;
}

void EnvmProfile::validate() const {
  if (levels_per_cell < 2 || level_error_std.size() != static_cast<std::size_t>(levels_per_cell)) {
    throw ParameterError("eNVM profile '" + name + "' must list one STD per cell level");
  }
  for (double s : level_error_std)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ParameterError("eNVM profile '" + name + "' has a negative STD");
}

bool EnvmProfile::ideal() const {
  return std::all_of(level_error_std.begin(), level_error_std.end(), [](double s) { return s == 0.0; });
}

std::string to_string(Polarity p) { return p == Polarity::Fixed ? "FIXED" : "FLIPPING"; }

Polarity polarity_from_string(const std::string& name) {
  if (name == "FIXED") return Polarity::Fixed;
  if (name == "FLIPPING") return Polarity::Flipping;
  throw ParameterError("unknown polarity '" + name + "' (expected FIXED or FLIPPING)");
}

void PimNoiseConfig::validate() const {
  profile.validate();
  if (!(offset_std >= 0.0) || !std::isfinite(offset_std)) throw ParameterError("offset_std must be nonnegative");
  if (!(white_std >= 0.0) || !std::isfinite(white_std)) throw ParameterError("white_std must be nonnegative");
}

std::uint32_t ChipInstance::statics_checksum() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  auto feed = [&](const Tensor& t) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(t.data()), static_cast<uInt>(t.size() * sizeof(double)));
  };
  for (const auto& a : arrays) {
    feed(a.delta_plus);
    feed(a.delta_minus);
    feed(a.offsets);
    feed(a.effective);
  }
  return static_cast<std::uint32_t>(crc);
}

ChipInstance fabricate(const Checkpoint& ckpt, const PimNoiseConfig& noise, std::uint64_t chip_seed) {
  noise.validate();
  ckpt.net.validate();
  ChipInstance chip;
  chip.net = ckpt.net;
  chip.noise = noise;
  chip.chip_seed = chip_seed;
  const auto params = parameters(ckpt.net);
  const RngStream root(chip_seed);
  for (const auto& p : params) {
    Tensor q = p.weight->forward_weights();
    if (!p.in_array) {
      chip.weights.push_back(std::move(q));
      chip.array_of_param.push_back(kNoArray);
      continue;
    }
    if (!p.weight->spec.on_grid_quantized()) {
      throw EncodingError("array weight '" + p.name + "' is full precision and has no cell encoding");
    }
    const std::size_t index = chip.arrays.size();
    ArrayInstance a;
    a.name = p.name;
    a.cells = encode_cell_pair(q, p.weight->spec);
    const EnvmProfile prof = noise.profile.for_levels(a.cells.levels_per_cell);

    // standard normals first, scaled per level afterwards, so the draws do not depend on the profile
    RngStream cell_rng = root.substream({kCellTag, index});
    a.delta_plus = gaussian(cell_rng, 0.0, 1.0, q.shape());
    a.delta_minus = gaussian(cell_rng, 0.0, 1.0, q.shape());
    for (std::size_t i = 0; i < q.size(); ++i) {
      a.delta_plus[i] *= prof.level_error_std[static_cast<std::size_t>(a.cells.level_index(a.cells.i_plus[i]))];
      a.delta_minus[i] *= prof.level_error_std[static_cast<std::size_t>(a.cells.level_index(a.cells.i_minus[i]))];
    }
    const std::size_t columns = q.dim(0);
    RngStream offset_rng = root.substream({kOffsetTag, index});
    a.offsets = gaussian(offset_rng, 0.0, 1.0, {columns});
    scale_inplace(a.offsets, noise.offset_std);

    a.effective = Tensor(q.shape());
    for (std::size_t i = 0; i < q.size(); ++i)
      a.effective[i] = q[i] + a.cells.alpha * (a.delta_plus[i] - a.delta_minus[i]);
    chip.weights.push_back(a.effective);
    chip.array_of_param.push_back(index);
    chip.arrays.push_back(std::move(a));
  }
  return chip;
}

int polarity_sign(const ChipInstance& chip, std::uint64_t sequence_key, std::size_t array, std::size_t column,
                  std::size_t comparison) {
  if (array >= chip.arrays.size() || column >= chip.arrays[array].offsets.size()) {
    throw ParameterError("polarity_sign: array or column out of range");
  }
  if (chip.noise.polarity == Polarity::Fixed) return 1;
  RngStream pol = polarity_stream(chip.chip_seed, sequence_key, array, comparison);
  std::uint64_t word = 0;
  for (std::size_t k = 0; k <= column / 64; ++k) word = pol.next_u64();
  return (word >> (column % 64)) & 1u ? -1 : 1;
}

PimStep pim_gru_timestep(const ChipInstance& chip, std::size_t layer, const Tensor& h_prev, const Tensor& x_in,
                         std::size_t t, const std::vector<std::uint64_t>& sequence_keys, const RngStream& noise) {
  const auto* g = std::get_if<GruStack>(&chip.net.body);
  if (!g) throw ConfigurationError("pim_gru_timestep: chip does not hold a GRU network");
  if (layer >= g->layers.size()) throw ParameterError("pim_gru_timestep: layer out of range");
  if (h_prev.rank() != 2 || x_in.rank() != 2 || h_prev.rows() != x_in.rows() || h_prev.rows() != sequence_keys.size()) {
    throw ShapeError("pim_gru_timestep: h_prev, x_in and sequence_keys must share one batch size");
  }
  require_binary(h_prev, "h_prev");
  require_binary(x_in, "x_in");
  const std::size_t gate_param = (g->input.use_bias ? 2 : 1) + 2 * layer;
  const std::size_t gate_array = chip.array_of_param[gate_param];
  const std::size_t cand_array = chip.array_of_param[gate_param + 1];
  const Tensor& wg = chip.weights[gate_param];
  const Tensor& wc = chip.weights[gate_param + 1];
  if (h_prev.cols() != wg.rows() || wg.cols() != h_prev.cols() + x_in.cols()) {
    throw ShapeError("pim_gru_timestep: input widths do not match layer " + std::to_string(layer));
  }
  const Tensor concat = hconcat(h_prev, x_in);
  PimStep s;
  s.gate_pre = matmul_nt(concat, wg);
  s.candidate_pre = matmul_nt(concat, wc);
  s.gate = Tensor(s.gate_pre.shape());
  s.candidate = Tensor(s.candidate_pre.shape());
  for (std::size_t b = 0; b < concat.rows(); ++b) {
    sense(chip, gate_array, s.gate_pre, s.gate, b, sequence_keys[b], t, noise);
    sense(chip, cand_array, s.candidate_pre, s.candidate, b, sequence_keys[b], t, noise);
  }
  s.h_next = gru_mux(s.gate, h_prev, s.candidate);
  return s;
}

std::vector<int> pim_predict(const ChipInstance& chip, const Batch& batch, std::uint64_t first_key,
                             const RngStream& noise) {
  if (batch.size() == 0) throw ShapeError("pim_predict: empty batch");
  if (const auto* g = std::get_if<GruStack>(&chip.net.body)) return predict_gru(chip, *g, batch, first_key, noise);
  return predict_conv(chip, std::get<ConvNet>(chip.net.body), batch, first_key, noise);
}

int pim_infer(const ChipInstance& chip, const Tensor& input, std::uint64_t sequence_key, const RngStream& noise) {
  Batch batch;
  batch.inputs.push_back(&input);
  batch.labels.push_back(0);
  return pim_predict(chip, batch, sequence_key, noise)[0];
}

double pim_accuracy(const ChipInstance& chip, const Dataset& data, const RngStream& noise, std::size_t batch_size) {
  if (data.size() == 0) throw ParameterError("pim_accuracy: empty dataset");
  if (batch_size == 0) throw ParameterError("pim_accuracy: batch_size must be positive");
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    const auto pred = pim_predict(chip, data.batch(b, e), b, noise);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[b + i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ChipStudy chip_population_study(const Checkpoint& ckpt, const PimNoiseConfig& noise, std::size_t num_chips,
                                const Dataset& data, std::uint64_t base_seed) {
  if (num_chips == 0) throw ParameterError("chip_population_study: num_chips must be positive");
  ChipStudy study;
  for (std::size_t c = 0; c < num_chips; ++c) {
    const std::uint64_t seed = base_seed + c;
    const ChipInstance chip = fabricate(ckpt, noise, seed);
    study.chip_seeds.push_back(seed);
    study.accuracies.push_back(pim_accuracy(chip, data, RngStream(seed).substream(0x7768)));
  }
  double sum = 0.0;
  for (double a : study.accuracies) sum += a;
  study.mean = sum / static_cast<double>(num_chips);
  study.std_defined = num_chips > 1;
  if (study.std_defined) {
    double ss = 0.0;
    for (double a : study.accuracies) ss += (a - study.mean) * (a - study.mean);
    study.std = std::sqrt(ss / static_cast<double>(num_chips - 1));
  }
  return study;
}

}  // namespace nna
