#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "nna/errors.hpp"
#include "nna/layers.hpp"
#include "nna/network.hpp"

using namespace nna;

namespace {

double weighted_sum(const Tensor& out, const Tensor& up) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * up[i];
  return s;
}

bool is_binary(const Tensor& t) {
  for (double v : t.values())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

Tensor random_binary(RngStream& rng, const Shape& shape) { return bernoulli(rng, 0.5, shape); }

NetworkGraph tiny_gru(std::uint64_t seed, std::size_t input_dim, std::size_t hidden, std::size_t layers,
                      std::size_t classes) {
  RngStream rng(seed);
  GruStackConfig cfg;
  cfg.input_dim = input_dim;
  cfg.input_units = hidden;
  cfg.hidden = hidden;
  cfg.num_layers = layers;
  cfg.num_classes = classes;
  cfg.input_bias = true;
  auto net = make_gru_stack(cfg, rng);
  // widen the weights so the sigmoids operate away from their linear region
  for (auto& p : parameters(net)) scale_inplace(p.weight->shadow, 2.0);
  return net;
}

}  // namespace

TEST_CASE("fc forward examples") {
  RngStream rng(1);
  const auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto out = fc_forward_with(eye, nullptr, Tensor::vector({1, -1}), ActivationSpec::step(), rng);
  CHECK(out.act.output.values()[0] == 1.0);
  CHECK(out.act.output.values()[1] == 0.0);

  FcLayer zero;
  zero.weight.shadow = Tensor({3, 4});
  zero.bias.shadow = Tensor({3});
  zero.activation = ActivationSpec::ncn(0.3, 0.0);
  const auto [y, trace] = fc_forward(zero, Tensor::vector({1, 2, 3, 4}), rng);
  CHECK(y == Tensor({1, 3}, 0.5));
  CHECK_THROWS_AS(fc_forward(zero, Tensor::vector({1, 2}), rng), ShapeError);
}

TEST_CASE("fc backward matches finite differences") {
  RngStream rng(2);
  const auto act = ActivationSpec::ncn(0.3, 0.4);
  Tensor w = gaussian(rng, 0.0, 0.5, {4, 5});
  Tensor b = gaussian(rng, 0.0, 0.5, {4});
  Tensor x = gaussian(rng, 0.0, 1.0, {3, 5});
  const Tensor up = gaussian(rng, 0.0, 1.0, {3, 4});
  const RngStream noise(77, 1);

  auto objective = [&](const Tensor& w_, const Tensor& b_, const Tensor& x_) {
    RngStream r = noise;
    return weighted_sum(fc_forward_with(w_, &b_, x_, act, r).act.output, up);
  };
  RngStream r = noise;
  const auto trace = fc_forward_with(w, &b, x, act, r);
  const auto g = fc_backward_with(w, trace, up, act);

  const double h = 1e-6;
  auto check = [&](Tensor& target, const Tensor& analytic) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target[i];
      target[i] = orig + h;
      const double fp = objective(w, b, x);
      target[i] = orig - h;
      const double fm = objective(w, b, x);
      target[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      CHECK(testing::relative_error(analytic[i], fd, 1e-6) <= 1e-6);
    }
  };
  check(w, g.weight);
  check(b, g.bias);
  check(x, g.input);
}

TEST_CASE("gru multiplexer") {
  RngStream rng(3);
  const auto h_prev = random_binary(rng, {2, 6});
  const auto c = random_binary(rng, {2, 6});
  CHECK(gru_mux(Tensor({2, 6}, 1.0), h_prev, c) == h_prev);
  CHECK(gru_mux(Tensor({2, 6}, 0.0), h_prev, c) == c);

  // gate forced fully on through the weights: strongly positive gate weights and an all-ones input
  Tensor wg({4, 7}, 5.0);
  const Tensor wc = gaussian(rng, 0.0, 1.0, {4, 7});
  const auto hp = random_binary(rng, {1, 4});
  const auto t = gru_step_with(wg, wc, hp, Tensor({1, 3}, 1.0), rng, ActivationSpec::step());
  CHECK(t.h_next == hp);
  // gate forced off: the state becomes the candidate
  wg.fill(-5.0);
  const auto t0 = gru_step_with(wg, wc, hp, Tensor({1, 3}, 1.0), rng, ActivationSpec::step());
  CHECK(t0.h_next == t0.candidate.output);
}

TEST_CASE("gru step with binary inputs stays binary") {
  RngStream rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor wg = gaussian(rng, 0.0, 1.0, {8, 13});
    const Tensor wc = gaussian(rng, 0.0, 1.0, {8, 13});
    const auto t = gru_step_with(wg, wc, random_binary(rng, {3, 8}), random_binary(rng, {3, 5}), rng,
                                 ActivationSpec::step());
    CHECK(is_binary(t.h_next));
  }

  // every hidden state of a stack stays binary over a whole sequence
  auto net = tiny_gru(5, 4, 6, 2, 3);
  const auto seq = gaussian(rng, 0.0, 1.0, {15, 4});
  Batch batch{{&seq}, {0}};
  const auto tr = std::get<GruStackTrace>(forward(net, prepare_weights(net), batch, ActivationSpec::step(), rng));
  for (const auto& per_t : tr.steps)
    for (const auto& s : per_t) CHECK(is_binary(s.h_next));
}

TEST_CASE("gru gate and candidate are monotone in their pre-activations") {
  RngStream rng(6);
  const auto act = ActivationSpec::ncn(0.05, 0.0);
  Tensor wg = gaussian(rng, 0.0, 1.0, {5, 9});
  const Tensor wc = gaussian(rng, 0.0, 1.0, {5, 9});
  const auto h = random_binary(rng, {1, 5});
  const auto x = Tensor({1, 4}, 1.0);
  const auto base = gru_step_with(wg, wc, h, x, rng, act);
  for (std::size_t i = 0; i < 5; ++i) {
    // raising a weight on an active input raises exactly one gate pre-activation
    Tensor w2 = wg;
    w2.at(i, 5) += 0.3;
    const auto t = gru_step_with(w2, wc, h, x, rng, act);
    CHECK(t.gate.pre_activation[i] > base.gate.pre_activation[i]);
    CHECK(t.gate.output[i] >= base.gate.output[i]);
  }
  const auto lo = activate(Tensor::vector({-0.2, -0.01, 0.0, 0.01, 0.2}), act, rng).output;
  for (std::size_t i = 1; i < lo.size(); ++i) CHECK(lo[i] >= lo[i - 1]);
}

TEST_CASE("bptt matches finite differences over the unrolled graph") {
  // 2 timesteps, hidden size 3, two GRU layers, NCN with fixed noise
  auto net = tiny_gru(7, 2, 3, 2, 3);
  RngStream rng(8);
  const auto s0 = gaussian(rng, 0.0, 1.0, {2, 2});
  const auto s1 = gaussian(rng, 0.0, 1.0, {2, 2});
  Batch batch{{&s0, &s1}, {1, 2}};
  const auto act = ActivationSpec::ncn(0.3, 0.5);
  const auto r = testing::check_gradients(net, batch, act, RngStream(9, 4));
  CHECK(parameter_count(net) < 1000);
  CHECK(r.within_tight == r.coordinates);
  CHECK(r.worst <= 1e-3);
}

TEST_CASE("bptt on a larger stack") {
  auto net = tiny_gru(10, 4, 8, 2, 5);
  RngStream rng(11);
  std::vector<Tensor> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(gaussian(rng, 0.0, 1.0, {5, 4}));
  Batch batch{{&seqs[0], &seqs[1], &seqs[2]}, {0, 4, 2}};
  const auto r = testing::check_gradients(net, batch, ActivationSpec::ncn(0.3, 0.3), RngStream(12));
  CHECK(parameter_count(net) <= 1000);
  CHECK(static_cast<double>(r.within_tight) >= 0.99 * static_cast<double>(r.coordinates));
  CHECK(r.worst <= 1e-3);
}

TEST_CASE("bptt structural properties") {
  auto net = tiny_gru(13, 3, 4, 2, 3);
  RngStream rng(14);
  // feature 1 is always zero, so its input-layer weights never affect the loss
  Tensor seq = gaussian(rng, 0.0, 1.0, {6, 3});
  for (std::size_t t = 0; t < 6; ++t) seq.at(t, 1) = 0.0;
  Batch batch{{&seq}, {2}};
  const auto act = ActivationSpec::ncn(0.3, 0.2);
  const auto w = prepare_weights(net);
  std::vector<Tensor> g1, g2;
  RngStream a(15), b(15);
  loss_and_gradients(net, w, batch, act, a, 1.0, g1);
  loss_and_gradients(net, w, batch, act, b, 2.0, g2);
  for (std::size_t j = 0; j < g1[0].rows(); ++j) CHECK(g1[0].at(j, 1) == 0.0);
  for (std::size_t p = 0; p < g1.size(); ++p)
    for (std::size_t i = 0; i < g1[p].size(); ++i) CHECK(g2[p][i] == 2.0 * g1[p][i]);

  RngStream c(16);
  CHECK_THROWS_AS(loss_and_gradients(net, w, batch, ActivationSpec::step(), c, 1.0, g1), ConfigurationError);
  CHECK_THROWS_AS(loss_and_gradients(net, w, batch, ActivationSpec::nbn(0.5), c, 1.0, g1), ConfigurationError);
}

TEST_CASE("conv examples") {
  RngStream rng(17);
  const auto img = gaussian(rng, 0.0, 1.0, {1, 36});
  ConvLayer one;
  one.kernels.shadow = Tensor({1, 1, 1, 1}, 1.0);
  one.followed_by_pool = false;
  one.activation = ActivationSpec::step();
  const auto [y, t] = conv_forward(one, 6, 6, img, rng);
  CHECK(t.act.pre_activation == img);

  ConvLayer zero;
  zero.kernels.shadow = Tensor({2, 1, 3, 3});
  zero.activation = ActivationSpec::step();
  const auto [y0, t0] = conv_forward(zero, 6, 6, img, rng);
  CHECK(t0.act.pre_activation == Tensor({1, 8}, 0.0));

  ConvLayer big;
  big.kernels.shadow = Tensor({1, 1, 7, 7});
  CHECK_THROWS_AS(conv_forward(big, 6, 6, img, rng), ShapeError);
}

TEST_CASE("conv pooling picks the window maximum") {
  ConvGeometry g{1, 4, 4, 1, 1, 1, 1, true};
  Tensor pre({16, 1});
  for (std::size_t i = 0; i < 16; ++i) pre[i] = static_cast<double>((i * 7) % 16);
  const auto pooled = pool_preactivation(pre, g, 1, nullptr);
  // windows of the 4x4 map [0,7,14,5 / 12,3,10,1 / 8,15,6,13 / 4,11,2,9]
  CHECK(pooled == Tensor::matrix(1, 4, {12, 14, 15, 13}));
}

TEST_CASE("conv backward matches finite differences") {
  RngStream rng(18);
  const auto act = ActivationSpec::ncn(0.3, 0.3);
  const ConvGeometry g{2, 8, 8, 3, 3, 3, 1, true};
  Tensor k = gaussian(rng, 0.0, 0.5, {3, 18});
  Tensor x = gaussian(rng, 0.0, 1.0, {2, 128});
  const Tensor up = gaussian(rng, 0.0, 1.0, {2, g.out_size()});
  const RngStream noise(19);
  auto objective = [&]() {
    RngStream r = noise;
    return weighted_sum(conv_forward_with(k, g, x, act, r).act.output, up);
  };
  RngStream r = noise;
  const auto trace = conv_forward_with(k, g, x, act, r);
  const auto grads = conv_backward_with(k, g, trace, up, act);
  const double h = 1e-5;
  const double floor = testing::resolution_floor(objective(), h, 1e-5);
  std::size_t bad = 0, total = 0;
  auto check = [&](Tensor& target, const Tensor& analytic) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target[i];
      target[i] = orig + h;
      const double fp = objective();
      target[i] = orig - h;
      const double fm = objective();
      target[i] = orig;
      const double e = testing::relative_error(analytic[i], (fp - fm) / (2 * h), floor);
      ++total;
      bad += e > 1e-5;
    }
  };
  check(k, grads.kernels);
  check(x, grads.input);
  CHECK(bad == 0);
  CHECK(total == 54 + 256);
}

TEST_CASE("conv network gradients") {
  RngStream rng(20);
  ConvNetConfig cfg;
  cfg.in_h = cfg.in_w = 10;
  cfg.conv_channels = {2, 3};
  cfg.kernel = 3;
  cfg.fc_hidden = {6};
  cfg.num_classes = 4;
  auto net = make_conv_net(cfg, rng);
  CHECK(parameter_count(net) <= 1000);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(gaussian(rng, 0.0, 1.0, {100}));
  Batch batch{{&imgs[0], &imgs[1], &imgs[2]}, {0, 3, 1}};
  const auto r = testing::check_gradients(net, batch, ActivationSpec::ncn(0.3, 0.2), RngStream(21));
  CHECK(static_cast<double>(r.within_tight) >= 0.99 * static_cast<double>(r.coordinates));
  CHECK(r.worst <= 1e-3);
}
