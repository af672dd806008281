#include "nna/dataset.hpp"

#include <zlib.h>

#include <cstdio>
#include <vector>

#include "nna/errors.hpp"
#include "nna/rng.hpp"

namespace nna {

Batch Dataset::batch(const std::vector<std::size_t>& indices) const {
  Batch b;
  b.inputs.reserve(indices.size());
  b.labels.reserve(indices.size());
  for (auto i : indices) {
    b.inputs.push_back(&inputs.at(i));
    b.labels.push_back(labels.at(i));
  }
  return b;
}

Batch Dataset::batch(std::size_t begin, std::size_t end) const {
  Batch b;
  for (std::size_t i = begin; i < end && i < size(); ++i) {
    b.inputs.push_back(&inputs[i]);
    b.labels.push_back(labels[i]);
  }
  return b;
}

Dataset Dataset::head(std::size_t n) const { return slice(0, n); }

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  Dataset d;
  end = std::min(end, size());
  for (std::size_t i = begin; i < end; ++i) {
    d.inputs.push_back(inputs[i]);
    d.labels.push_back(labels[i]);
  }
  return d;
}

void SynthSeqTask::validate() const {
  if (seq_len == 0 || input_dim == 0 || motif_length == 0) throw ParameterError("synth task: dimensions must be positive");
  if (motif_length > seq_len) throw ParameterError("synth task: motif_length exceeds seq_len");
  if (num_classes < 2) throw ParameterError("synth task: need at least two classes");
  if (!(noise_std >= 0.0) || !(amplitude > 0.0)) throw ParameterError("synth task: noise_std >= 0 and amplitude > 0");
  if (train_size == 0) throw ParameterError("synth task: train_size must be positive");
}

std::vector<Tensor> synth_motifs(const SynthSeqTask& task) {
  task.validate();
  RngStream rng = RngStream(task.seed).substream(0x6d6f74);
  std::vector<Tensor> motifs;
  while (motifs.size() < task.num_classes) {
    Tensor m({task.motif_length, task.input_dim});
    for (auto& v : m.values()) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    // reject exact duplicates so every class is identifiable
    bool dup = false;
    for (const auto& other : motifs) dup = dup || other == m;
    if (!dup) motifs.push_back(std::move(m));
  }
  return motifs;
}

namespace {

Dataset synth_split(const SynthSeqTask& task, const std::vector<Tensor>& motifs, std::size_t n, std::uint64_t key) {
  RngStream rng = RngStream(task.seed).substream(key);
  Dataset d;
  d.inputs.reserve(n);
  d.labels.reserve(n);
  const std::size_t positions = task.seq_len - task.motif_length + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % task.num_classes);
    Tensor x = gaussian(rng, 0.0, task.noise_std, {task.seq_len, task.input_dim});
    const std::size_t start = static_cast<std::size_t>(rng.next_u64() % positions);
    const Tensor& m = motifs[static_cast<std::size_t>(label)];
    for (std::size_t t = 0; t < task.motif_length; ++t)
      for (std::size_t j = 0; j < task.input_dim; ++j) x.at(start + t, j) += task.amplitude * m.at(t, j);
    d.inputs.push_back(std::move(x));
    d.labels.push_back(label);
  }
  return d;
}

std::vector<unsigned char> read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string what = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw FormatError("'" + path + "': decompression failed at offset " + std::to_string(out.size()) + ": " + what);
  }
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& path) {
  if (offset + 4 > b.size()) {
    throw FormatError("'" + path + "': truncated at offset " + std::to_string(offset) + " while reading the header");
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

void require_magic(const std::vector<unsigned char>& b, std::uint32_t expected, const std::string& path) {
  const auto magic = be32(b, 0, path);
  if (magic != expected) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x at offset 0 (expected 0x%08x)", magic, expected);
    throw FormatError("'" + path + "': " + buf);
  }
}

void require_payload(const std::vector<unsigned char>& b, std::size_t header, std::size_t payload,
                     const std::string& path) {
  if (b.size() < header + payload) {
    throw FormatError("'" + path + "': truncated at offset " + std::to_string(b.size()) + ", expected " +
                      std::to_string(header + payload) + " bytes");
  }
}

}  // namespace

DatasetSplits gen_synth_seq(const SynthSeqTask& task) {
  const auto motifs = synth_motifs(task);
  return {synth_split(task, motifs, task.train_size, 1), synth_split(task, motifs, task.validation_size, 2),
          synth_split(task, motifs, task.test_size, 3)};
}

Dataset load_mnist(const std::string& images_path, const std::string& labels_path, std::size_t limit) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  require_magic(img, 0x00000803u, images_path);
  require_magic(lab, 0x00000801u, labels_path);
  const std::size_t n_img = be32(img, 4, images_path), rows = be32(img, 8, images_path),
                    cols = be32(img, 12, images_path);
  const std::size_t n_lab = be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw FormatError("'" + labels_path + "': label count " + std::to_string(n_lab) + " at offset 4 does not match " +
                      std::to_string(n_img) + " images");
  }
  require_payload(img, 16, n_img * rows * cols, images_path);
  require_payload(lab, 8, n_lab, labels_path);
  const std::size_t n = limit == 0 ? n_img : std::min(limit, n_img);
  Dataset d;
  d.inputs.reserve(n);
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char y = lab[8 + i];
    if (y > 9) throw FormatError("'" + labels_path + "': label " + std::to_string(y) + " at offset " + std::to_string(8 + i));
    Tensor x({rows * cols});
    const unsigned char* p = img.data() + 16 + i * rows * cols;
    for (std::size_t k = 0; k < rows * cols; ++k) x[k] = p[k] / 255.0;
    d.inputs.push_back(std::move(x));
    d.labels.push_back(y);
  }
  return d;
}

}  // namespace nna
