#include "nna/rng.hpp"

#include <cmath>
#include <numbers>

#include "nna/errors.hpp"

namespace nna {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::array<std::uint64_t, 2> philox_block(std::uint64_t seed, std::uint64_t stream_key, std::uint64_t block) {
  const auto out = philox4x32_10(
      {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
       static_cast<std::uint32_t>(stream_key), static_cast<std::uint32_t>(stream_key >> 32)},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  return {(static_cast<std::uint64_t>(out[1]) << 32) | out[0], (static_cast<std::uint64_t>(out[3]) << 32) | out[2]};
}

inline double to_open_unit(std::uint64_t w) {
  // (k + 0.5) / 2^53 lies strictly inside (0, 1).
  return (static_cast<double>(w >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t key) : seed_(seed), key_(key) {}

RngStream RngStream::substream(std::uint64_t child_key) const { return RngStream(seed_, mix64(key_, child_key)); }

RngStream RngStream::substream(std::initializer_list<std::uint64_t> path) const {
  std::uint64_t k = key_;
  for (auto p : path) k = mix64(k, p);
  return RngStream(seed_, k);
}

void RngStream::refill() {
  buffer_ = philox_block(seed_, key_, block_++);
  buffered_ = 2;
}

std::uint64_t RngStream::next_u64() {
  if (buffered_ == 0) refill();
  return buffer_[2 - buffered_--];
}

std::uint64_t RngStream::word_at(std::uint64_t seed, std::uint64_t key, std::uint64_t index) {
  return philox_block(seed, key, index / 2)[index % 2];
}

double RngStream::uniform() { return to_open_unit(next_u64()); }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

Tensor gaussian(RngStream& rng, double mean, double sigma, const Shape& shape) {
  if (!(sigma >= 0.0)) throw ParameterError("gaussian: sigma must be >= 0, got " + std::to_string(sigma));
  Tensor out(shape, mean);
  if (sigma == 0.0) return out;
  for (auto& v : out.values()) v = mean + sigma * rng.normal();
  return out;
}

Tensor bernoulli(RngStream& rng, double p, const Shape& shape) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("bernoulli: p must lie in [0,1], got " + std::to_string(p));
  Tensor out(shape);
  for (auto& v : out.values()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return out;
}

}  // namespace nna
