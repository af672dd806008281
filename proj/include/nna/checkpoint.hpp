#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nna/network.hpp"

namespace nna {

/// Statistics of one group of noise-injected pre-activations, measured on a
/// noise-free pass of a full-precision network.
struct PreactStat {
  std::string group;
  std::uint64_t count = 0;
  double mean = 0.0;
  double std = 0.0;

  friend bool operator==(const PreactStat&, const PreactStat&) = default;
};

/// One training stage that contributed to a checkpoint.
struct StageRecord {
  std::string name;
  ActivationSpec activation;
  QuantSpec weight_quant;
  std::uint32_t epochs = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;

  friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

struct Checkpoint {
  Checkpoint() = default;
  explicit Checkpoint(NetworkGraph graph) : net(std::move(graph)) {}

  NetworkGraph net;
  bool has_preact_stats = false;
  double pooled_preact_std = 0.0;
  std::vector<PreactStat> preact_stats;
  std::vector<StageRecord> provenance;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned little-endian binary image; see docs/checkpoint_format.md.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Written through a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Writes `contents` to `path` atomically (temporary file + rename).
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

}  // namespace nna
