#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nna/errors.hpp"
#include "nna/optimizer.hpp"
#include "nna/quantizer.hpp"
#include "nna/rng.hpp"

using namespace nna;

namespace {

// Exhaustive nearest-level search over the explicit level list, ties to the smaller magnitude.
double nearest_level_oracle(double w, int levels, double alpha) {
  const int half = (levels - 1) / 2;
  const double c = std::min(std::max(w, -alpha), alpha);
  double best = 0.0, best_d = std::numeric_limits<double>::infinity();
  for (int k = -half; k <= half; ++k) {
    const double v = (k < 0 ? -1.0 : 1.0) * alpha * (static_cast<double>(std::abs(k)) / half);
    const double d = std::fabs(v - c);
    if (d < best_d || (d == best_d && std::fabs(v) < std::fabs(best))) {
      best = v;
      best_d = d;
    }
  }
  return best;
}

double sort_percentile_oracle(const Tensor& w, double pct) {
  std::vector<double> m;
  for (double v : w.values()) m.push_back(std::fabs(v));
  std::sort(m.begin(), m.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(m.size())));
  return m[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

TEST_CASE("select_alpha") {
  CHECK(select_alpha(Tensor::vector({-1, 1, -1, 1}), 100.0) == 1.0);
  Tensor ramp({21});
  for (int k = -10; k <= 10; ++k) ramp[static_cast<std::size_t>(k + 10)] = 0.1 * k;
  CHECK(select_alpha(ramp, 100.0) == doctest::Approx(1.0).epsilon(1e-15));
  RngStream rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto w = gaussian(rng, 0.0, 1.0, {37, 53});
    CHECK(select_alpha(w, 99.5) == sort_percentile_oracle(w, 99.5));
  }
  CHECK_THROWS_AS(select_alpha(Tensor({3, 3}), 99.5), DegenerateInputError);
  CHECK_THROWS_AS(select_alpha(ramp, 0.0), ParameterError);
}

TEST_CASE("multilevel quantize examples") {
  const auto s7 = QuantSpec::multilevel(7, 1.0);
  CHECK(quantize(Tensor::vector({0.4}), s7)[0] == 1.0 / 3.0);
  CHECK(quantize(Tensor::vector({2.5}), s7)[0] == 1.0);
  CHECK(quantize(Tensor::vector({-2.5}), s7)[0] == -1.0);
  CHECK(quantize(Tensor::vector({0.0}), s7)[0] == 0.0);
  CHECK(quantize(Tensor::vector({0.0}), QuantSpec::ternary())[0] == 0.0);
  // exact midpoint between 0 and 1/3 goes toward zero
  CHECK(quantize_multilevel(1.0 / 6.0, 7, 1.0) == 0.0);
  CHECK(quantize_multilevel(-0.5, 3, 1.0) == 0.0);
  CHECK_THROWS_AS(quantize(Tensor::vector({0.0}), QuantSpec::multilevel(6, 1.0)), ParameterError);
  CHECK_THROWS_AS(quantize(Tensor::vector({0.0}), QuantSpec::multilevel(7, 0.0)), ParameterError);
}

TEST_CASE("multilevel quantize agrees with exhaustive oracle") {
  RngStream rng(2);
  for (int levels : {3, 7, 15}) {
    const double alpha = 0.8;
    const auto w = gaussian(rng, 0.0, 0.6, {10000});
    const auto q = quantize(w, QuantSpec::multilevel(levels, alpha));
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      mismatches += q[i] != nearest_level_oracle(w[i], levels, alpha);
      const double clipped = std::clamp(w[i], -alpha, alpha);
      CHECK(std::fabs(q[i] - clipped) <= alpha / (levels - 1) + 1e-15);
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("quantize is monotone") {
  RngStream rng(3);
  auto w = gaussian(rng, 0.0, 1.0, {5000});
  std::sort(w.values().begin(), w.values().end());
  for (const auto& spec : {QuantSpec::multilevel(7, 1.2), QuantSpec::multilevel(15, 0.5), QuantSpec::ternary(),
                           QuantSpec::binary()}) {
    const auto q = quantize(w, spec);
    for (std::size_t i = 1; i < q.size(); ++i) CHECK(q[i] >= q[i - 1]);
  }
}

TEST_CASE("ternary and binary schemes") {
  const auto w = Tensor::vector({-1.0, -0.5, 0.02, 0.04, 0.3, 0.9});
  // threshold 0.05 * 1.0; mean |w| above it = (1 + 0.5 + 0.3 + 0.9) / 4
  const auto t = quantize(w, QuantSpec::ternary());
  const double s = (1.0 + 0.5 + 0.3 + 0.9) / 4.0;
  CHECK(t == Tensor::vector({-s, -s, 0.0, 0.0, s, s}));
  const auto b = quantize(w, QuantSpec::binary());
  const double m = (1.0 + 0.5 + 0.02 + 0.04 + 0.3 + 0.9) / 6.0;
  CHECK(b == Tensor::vector({-m, -m, m, m, m, m}));
  CHECK(quantize(w, QuantSpec::fp()) == w);
}

TEST_CASE("cell-pair codec reproduces the 7-level mapping table") {
  // columns: weight / I- / I+ in units of alpha and I_fs
  const double weight[7] = {-1.0, -2.0 / 3, -1.0 / 3, 0.0, 1.0 / 3, 2.0 / 3, 1.0};
  const double i_minus[7] = {1.0, 2.0 / 3, 1.0 / 3, 0, 0, 0, 0};
  const double i_plus[7] = {0, 0, 0, 0, 1.0 / 3, 2.0 / 3, 1.0};
  for (double alpha : {1.0, 0.37}) {
    const auto spec = QuantSpec::multilevel(7, alpha);
    Tensor w({7});
    for (int k = 0; k < 7; ++k) w[static_cast<std::size_t>(k)] = quantize_multilevel(weight[k] * alpha, 7, alpha);
    const auto cells = encode_cell_pair(w, spec);
    CHECK(cells.levels_per_cell == 4);
    for (std::size_t k = 0; k < 7; ++k) {
      CHECK(cells.i_minus[k] == doctest::Approx(i_minus[k]).epsilon(1e-15));
      CHECK(cells.i_plus[k] == doctest::Approx(i_plus[k]).epsilon(1e-15));
      CHECK(std::min(cells.i_plus[k], cells.i_minus[k]) == 0.0);
    }
    CHECK(decode_cell_pair(cells, spec) == w);
  }
}

TEST_CASE("cell-pair decode examples") {
  const auto spec = QuantSpec::multilevel(7, 1.0);
  CellPairArray c{Tensor::vector({1.0, 0.0}), Tensor::vector({0.0, 1.0 / 3.0}), 4, 1.0};
  const auto w = decode_cell_pair(c, spec);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("cell-pair codec over level counts") {
  RngStream rng(4);
  for (auto [levels, cell_levels] : {std::pair{7, 4}, std::pair{15, 8}, std::pair{3, 2}}) {
    const auto spec = QuantSpec::multilevel(levels, 0.7);
    CHECK(spec.levels_per_cell() == cell_levels);
    const auto q = quantize(gaussian(rng, 0.0, 0.5, {40, 30}), spec);
    const auto cells = encode_cell_pair(q, spec);
    CHECK(decode_cell_pair(cells, spec) == q);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(std::min(cells.i_plus[i], cells.i_minus[i]) == 0.0);
      const int k = cells.level_index(std::max(cells.i_plus[i], cells.i_minus[i]));
      CHECK(k >= 0);
      CHECK(k < cell_levels);
    }
  }
  CHECK_THROWS_AS(encode_cell_pair(Tensor::vector({0.5}), QuantSpec::multilevel(7, 1.0)), EncodingError);
  CHECK_THROWS_AS(encode_cell_pair(Tensor::vector({0.5}), QuantSpec::fp()), EncodingError);
  // ternary weights encode as a pair of binary cells
  const auto t = quantize(Tensor::vector({-0.8, 0.01, 0.6}), QuantSpec::ternary());
  const auto tc = encode_cell_pair(t, QuantSpec::ternary());
  CHECK(tc.levels_per_cell == 2);
  CHECK(decode_cell_pair(tc, QuantSpec::ternary()) == t);
}

TEST_CASE("quantized training step") {
  RngStream rng(5);
  QuantizedWeight w{gaussian(rng, 0.0, 1.0, {4, 4}), QuantSpec::multilevel(7, 1.0)};
  const Tensor before = w.shadow;
  SgdOptimizer sgd(0.1, 0.0);
  const auto fwd = quantized_training_step(w, Tensor({4, 4}), sgd, 0);
  CHECK(w.shadow == before);
  CHECK(fwd == quantize(before, w.spec));

  const auto g = gaussian(rng, 0.0, 1.0, {4, 4});
  QuantizedWeight fp{before, QuantSpec::fp()};
  SgdOptimizer sgd2(0.1, 0.0);
  quantized_training_step(fp, g, sgd2, 0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(fp.shadow[i] == before[i] - 0.1 * g[i]);

  const auto out = quantized_training_step(w, g, sgd, 0);
  CHECK(out == quantize(w.shadow, w.spec));
  // shadow weights keep full precision while the forward weights stay on the grid
  CHECK(w.shadow != out);
}
