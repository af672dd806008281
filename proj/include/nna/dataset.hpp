#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nna/network.hpp"
#include "nna/tensor.hpp"

namespace nna {

/// Labeled examples. Sequence examples are [T x D]; images are flat [H*W].
struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  Batch batch(const std::vector<std::size_t>& indices) const;
  Batch batch(std::size_t begin, std::size_t end) const;
  /// First n examples (all if n >= size()).
  Dataset head(std::size_t n) const;
  /// Examples [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
};

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Desk-scale temporal classification task. Class c owns a +-1 motif of
/// shape [motif_length x input_dim]; each example is Gaussian noise with its
/// class motif (times `amplitude`) added at a uniformly random start time, so
/// the network has to latch the evidence until the final timestep.
struct SynthSeqTask {
  std::size_t seq_len = 20;
  std::size_t input_dim = 8;
  std::size_t num_classes = 12;
  std::size_t motif_length = 4;
  double amplitude = 3.0;
  double noise_std = 1.0;
  std::size_t train_size = 5000;
  std::size_t validation_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const SynthSeqTask&, const SynthSeqTask&) = default;
};

/// Motif of every class, [num_classes] tensors of [motif_length x input_dim].
std::vector<Tensor> synth_motifs(const SynthSeqTask& task);
/// Deterministic in task.seed. Labels cycle through the classes, so every
/// class count differs by at most one. Splits come from disjoint substreams.
DatasetSplits gen_synth_seq(const SynthSeqTask& task);

/// Reads an IDX image/label file pair (optionally gzip-compressed). Pixels
/// are scaled to [0, 1]. `limit` keeps the first `limit` examples (0 = all).
/// Throws FormatError naming the byte offset of the first problem.
Dataset load_mnist(const std::string& images_path, const std::string& labels_path, std::size_t limit = 0);

}  // namespace nna
