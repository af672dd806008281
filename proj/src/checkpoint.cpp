#include "nna/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nna/errors.hpp"

namespace nna {
namespace {

constexpr char kMagic[8] = {'N', 'N', 'A', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(b_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(b_[pos_++])} << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("checkpoint: " + what + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) fail("truncated record");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

void write_activation(Writer& w, const ActivationSpec& a) {
  w.u32(static_cast<std::uint32_t>(a.kind));
  w.f64(a.tau);
  w.f64(a.sigma_train);
  w.f64(a.sigma_eval);
  w.f64(a.slope);
}

ActivationSpec read_activation(Reader& r) {
  ActivationSpec a;
  const auto kind = r.u32();
  if (kind > static_cast<std::uint32_t>(ActivationKind::Step)) r.fail("unknown activation kind " + std::to_string(kind));
  a.kind = static_cast<ActivationKind>(kind);
  a.tau = r.f64();
  a.sigma_train = r.f64();
  a.sigma_eval = r.f64();
  a.slope = r.f64();
  return a;
}

void write_quant(Writer& w, const QuantSpec& q) {
  w.u32(static_cast<std::uint32_t>(q.scheme));
  w.i32(q.levels);
  w.f64(q.alpha);
  w.f64(q.ternary_threshold);
}

QuantSpec read_quant(Reader& r) {
  QuantSpec q;
  const auto scheme = r.u32();
  if (scheme > static_cast<std::uint32_t>(QuantScheme::Binary)) r.fail("unknown quantization scheme");
  q.scheme = static_cast<QuantScheme>(scheme);
  q.levels = r.i32();
  q.alpha = r.f64();
  q.ternary_threshold = r.f64();
  return q;
}

// Skeleton with the right topology but empty tensors; parameter records fill it.
NetworkGraph read_topology(Reader& r) {
  const auto arch = r.u32();
  if (arch == static_cast<std::uint32_t>(Architecture::GruStack)) {
    GruStack g;
    g.input.use_bias = r.u8() != 0;
    const auto layers = r.u64();
    if (layers > 1024) r.fail("implausible GRU layer count");
    g.layers.resize(layers);
    for (auto& l : g.layers) l.hidden_size = r.u64();
    g.head.use_bias = true;
    return {std::move(g), {}};
  }
  if (arch == static_cast<std::uint32_t>(Architecture::ConvNet)) {
    ConvNet c;
    c.in_c = r.u64();
    c.in_h = r.u64();
    c.in_w = r.u64();
    const auto convs = r.u64();
    if (convs > 1024) r.fail("implausible conv layer count");
    c.convs.resize(convs);
    for (auto& l : c.convs) {
      l.stride = r.u64();
      l.followed_by_pool = r.u8() != 0;
    }
    const auto hidden = r.u64();
    if (hidden > 1024) r.fail("implausible FC layer count");
    c.hidden.resize(hidden);
    for (auto& f : c.hidden) f.use_bias = r.u8() != 0;
    c.head.use_bias = true;
    return {std::move(c), {}};
  }
  r.fail("unknown architecture " + std::to_string(arch));
}

void write_topology(Writer& w, const NetworkGraph& net) {
  w.u32(static_cast<std::uint32_t>(net.architecture()));
  if (const auto* g = std::get_if<GruStack>(&net.body)) {
    w.u8(g->input.use_bias);
    w.u64(g->layers.size());
    for (const auto& l : g->layers) w.u64(l.hidden_size);
    return;
  }
  const auto& c = std::get<ConvNet>(net.body);
  w.u64(c.in_c);
  w.u64(c.in_h);
  w.u64(c.in_w);
  w.u64(c.convs.size());
  for (const auto& l : c.convs) {
    w.u64(l.stride);
    w.u8(l.followed_by_pool);
  }
  w.u64(c.hidden.size());
  for (const auto& f : c.hidden) w.u8(f.use_bias);
}

void set_layer_activations(NetworkGraph& net) {
  std::visit(
      [&](auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, GruStack>) {
          body.input.activation = net.activation;
        } else {
          for (auto& l : body.convs) l.activation = net.activation;
          for (auto& f : body.hidden) f.activation = net.activation;
        }
      },
      net.body);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(std::string_view(kMagic, 8));
  w.u32(kCheckpointVersion);
  write_topology(w, ckpt.net);
  write_activation(w, ckpt.net.activation);
  const auto params = parameters(ckpt.net);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u8(p.in_array);
    write_quant(w, p.weight->spec);
    const auto& t = p.weight->shadow;
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  w.u8(ckpt.has_preact_stats);
  w.f64(ckpt.pooled_preact_std);
  w.u32(static_cast<std::uint32_t>(ckpt.preact_stats.size()));
  for (const auto& s : ckpt.preact_stats) {
    w.str(s.group);
    w.u64(s.count);
    w.f64(s.mean);
    w.f64(s.std);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.provenance.size()));
  for (const auto& s : ckpt.provenance) {
    w.str(s.name);
    write_activation(w, s.activation);
    write_quant(w, s.weight_quant);
    w.u32(s.epochs);
    w.u64(s.seed);
    w.f64(s.final_loss);
  }
  auto& bytes = w.bytes();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  w.u32(static_cast<std::uint32_t>(crc));
  return std::move(bytes);
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != std::string_view(kMagic, 8)) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  const auto stored = tail.u32();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  if (stored != static_cast<std::uint32_t>(crc)) {
    throw FormatError("checkpoint: checksum mismatch at offset " + std::to_string(bytes.size() - 4));
  }
  Reader r(body);
  for (int i = 0; i < 8; ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.net = read_topology(r);
  ckpt.net.activation = read_activation(r);
  set_layer_activations(ckpt.net);
  auto params = parameters(ckpt.net);
  const auto n = r.u32();
  if (n != params.size()) r.fail("expected " + std::to_string(params.size()) + " parameter records, found " + std::to_string(n));
  for (auto& p : params) {
    const auto name = r.str();
    if (name != p.name) r.fail("expected parameter '" + p.name + "', found '" + name + "'");
    if ((r.u8() != 0) != p.in_array) r.fail("array placement flag mismatch for '" + name + "'");
    p.weight->spec = read_quant(r);
    const auto rank = r.u32();
    if (rank == 0 || rank > 4) r.fail("bad tensor rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t count = shape_size(shape);
    if (count > (1u << 28)) r.fail("implausible tensor size for '" + name + "'");
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64();
    p.weight->shadow = Tensor(std::move(shape), std::move(data));
  }
  if (auto* g = std::get_if<GruStack>(&ckpt.net.body)) {
    if (g->input.bias.shadow.empty()) g->input.bias.shadow = Tensor({g->input.out_features()});
  } else {
    auto& c = std::get<ConvNet>(ckpt.net.body);
    for (auto& f : c.hidden)
      if (f.bias.shadow.empty()) f.bias.shadow = Tensor({f.out_features()});
  }
  ckpt.has_preact_stats = r.u8() != 0;
  ckpt.pooled_preact_std = r.f64();
  const auto ns = r.u32();
  for (std::uint32_t i = 0; i < ns; ++i) {
    PreactStat s;
    s.group = r.str();
    s.count = r.u64();
    s.mean = r.f64();
    s.std = r.f64();
    ckpt.preact_stats.push_back(std::move(s));
  }
  const auto np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    StageRecord s;
    s.name = r.str();
    s.activation = read_activation(r);
    s.weight_quant = read_quant(r);
    s.epochs = r.u32();
    s.seed = r.u64();
    s.final_loss = r.f64();
    ckpt.provenance.push_back(std::move(s));
  }
  if (r.pos() != body.size()) r.fail("trailing bytes");
  try {
    ckpt.net.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: inconsistent network: ") + e.what());
  }
  return ckpt;
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace nna
