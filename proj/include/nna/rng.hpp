#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

#include "nna/tensor.hpp"

namespace nna {

/// Counter-based random stream (Philox4x32-10). A stream is fully identified
/// by (seed, key); the n-th draw is a pure function of (seed, key, n), so
/// substreams can be addressed by key regardless of evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t key = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }

  /// Independent child stream; the same (parent, child_key) always yields the same child.
  RngStream substream(std::uint64_t child_key) const;
  RngStream substream(std::initializer_list<std::uint64_t> path) const;

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1) with 53-bit resolution.
  double uniform();
  double normal();
  bool bernoulli(double p);

  /// Stateless access: the 64-bit word at position `index` of stream (seed, key).
  static std::uint64_t word_at(std::uint64_t seed, std::uint64_t key, std::uint64_t index);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

/// i.i.d. N(mean, sigma^2) samples; sigma = 0 yields the constant mean.
Tensor gaussian(RngStream& rng, double mean, double sigma, const Shape& shape);
/// i.i.d. {0,1} samples with P(1) = p.
Tensor bernoulli(RngStream& rng, double p, const Shape& shape);

}  // namespace nna
