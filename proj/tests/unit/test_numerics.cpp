#include <doctest.h>

#include <cmath>

#include "nna/errors.hpp"
#include "nna/rng.hpp"
#include "nna/tensor.hpp"

using namespace nna;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor random_matrix(RngStream& rng, std::size_t r, std::size_t c) { return gaussian(rng, 0.0, 1.0, {r, c}); }

}  // namespace

TEST_CASE("matmul examples") {
  const auto id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto m = Tensor::matrix(2, 2, {3, 4, 5, 6});
  CHECK(matmul(id, m) == m);
  const auto r = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r[0] == 11.0);
  CHECK_THROWS_AS(matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 2, {3, 4})), ShapeError);
}

TEST_CASE("matmul agrees with naive triple loop") {
  RngStream rng(11, 3);
  const auto a = random_matrix(rng, 5, 7);
  const auto b = random_matrix(rng, 7, 3);
  const auto c = matmul(a, b);
  const auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::fabs(c[i] - ref[i]) <= 1e-12);

  // Ragged shapes exercise both the register tiles and the edge loops. The
  // reference sums in the same order, so agreement must be bit-exact.
  RngStream dims(12, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + dims.next_u64() % 70, k = 1 + dims.next_u64() % 70, n = 1 + dims.next_u64() % 70;
    const auto x = random_matrix(rng, m, k);
    const auto y = random_matrix(rng, k, n);
    CHECK(matmul(x, y) == naive_matmul(x, y));
    Tensor acc({m, n});
    matmul_tn_accumulate(transpose(x), y, acc);
    CHECK(acc == naive_matmul(x, y));
  }
}

TEST_CASE("transposed products match explicit transposes") {
  RngStream rng(5);
  const auto a = random_matrix(rng, 4, 6);
  const auto b = random_matrix(rng, 3, 6);
  CHECK(matmul_nt(a, b) == matmul(a, transpose(b)));
  const auto c = random_matrix(rng, 4, 2);
  Tensor acc({6, 2});
  matmul_tn_accumulate(a, c, acc);
  const auto want = matmul(transpose(a), c);
  for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(want[i]).epsilon(1e-14));
}

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("gaussian") {
  RngStream rng(1, 2);
  const auto zeros = gaussian(rng, 0.0, 0.0, {4});
  CHECK(zeros == Tensor({4}, 0.0));
  CHECK_THROWS_AS(gaussian(rng, 0.0, -1.0, {4}), ParameterError);

  const auto big = gaussian(rng, 0.0, 1.0, {1000000});
  double mean = 0.0, sq = 0.0;
  for (double v : big.values()) mean += v;
  mean /= big.size();
  for (double v : big.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (big.size() - 1));
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(sd - 1.0) < 0.01);

  RngStream a(77, 9), b(77, 9);
  CHECK(gaussian(a, 0.3, 2.0, {64}) == gaussian(b, 0.3, 2.0, {64}));
}

TEST_CASE("bernoulli") {
  RngStream rng(3);
  CHECK(bernoulli(rng, 1.0, {100}) == Tensor({100}, 1.0));
  CHECK(bernoulli(rng, 0.0, {100}) == Tensor({100}, 0.0));
  CHECK_THROWS_AS(bernoulli(rng, 1.5, {1}), ParameterError);
  CHECK_THROWS_AS(bernoulli(rng, -0.1, {1}), ParameterError);
  const auto s = bernoulli(rng, 0.5, {1000000});
  double mean = 0.0;
  for (double v : s.values()) mean += v;
  mean /= s.size();
  CHECK(std::fabs(mean - 0.5) < 0.005);
}

TEST_CASE("streams are addressable and independent") {
  RngStream root(42);
  auto s1 = root.substream(1);
  auto s1_again = root.substream(1);
  auto s2 = root.substream(2);
  CHECK(s1.next_u64() == s1_again.next_u64());

  // the i-th word is a pure function of (seed, key, i)
  RngStream seq(9, 4);
  for (std::uint64_t i = 0; i < 7; ++i) CHECK(seq.next_u64() == RngStream::word_at(9, 4, i));

  // sample correlation between two substreams is near zero
  const std::size_t n = 200000;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s1.normal(), y = s2.normal();
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  CHECK(std::fabs(sxy / std::sqrt(sxx * syy)) < 0.01);
}

TEST_CASE("uniform stays in the open unit interval") {
  RngStream rng(0);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}
