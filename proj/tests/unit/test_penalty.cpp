#include <doctest.h>

#include <cmath>

#include "nna/errors.hpp"
#include "nna/penalty.hpp"

using namespace nna;

namespace {

NetworkGraph random_gru(std::uint64_t seed, std::size_t input_dim, std::size_t hidden, std::size_t layers,
                        std::size_t classes, double widen) {
  GruStackConfig cfg;
  cfg.input_dim = input_dim;
  cfg.input_units = hidden;
  cfg.hidden = hidden;
  cfg.num_layers = layers;
  cfg.num_classes = classes;
  RngStream rng(seed);
  auto net = make_gru_stack(cfg, rng);
  for (auto& p : parameters(net)) scale_inplace(p.weight->shadow, widen);
  return net;
}

Dataset random_sequences(std::uint64_t seed, std::size_t n, std::size_t steps, std::size_t dim, int classes) {
  RngStream rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.inputs.push_back(gaussian(rng, 0.0, 1.0, {steps, dim}));
    d.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
  }
  return d;
}

Dataset repeated(const Tensor& x, int label, std::size_t copies) {
  Dataset d;
  d.inputs.assign(copies, x);
  d.labels.assign(copies, label);
  return d;
}

double dot_noise(const GruStackTrace& tr, const GruStackBackward& g) {
  double s = 0.0;
  auto acc = [&](const Tensor& grad, const Tensor& noise) {
    for (std::size_t i = 0; i < grad.size(); ++i) s += grad[i] * noise[i];
  };
  for (std::size_t t = 0; t < tr.steps.size(); ++t) {
    acc(g.input_pre[t], tr.input[t].act.noise_sample);
    for (std::size_t l = 0; l < tr.steps[t].size(); ++l) {
      acc(g.gate_pre[t][l], tr.steps[t][l].gate.noise_sample);
      acc(g.candidate_pre[t][l], tr.steps[t][l].candidate.noise_sample);
    }
  }
  return s;
}

}  // namespace

TEST_CASE("generic penalty examples") {
  // single sigmoid neuron with L = output at x = 0 and sigma = 1
  const double slope = activation_derivative(ActivationSpec::fp_sigmoid(), 0.0, 0.0);
  CHECK(0.5 * 1.0 * slope * slope == doctest::Approx(0.03125).epsilon(1e-15));

  const auto net = random_gru(1, 3, 4, 2, 3, 1.5);
  const auto data = random_sequences(2, 30, 5, 3, 3);
  CHECK(penalty_generic(net, data, 0.0) == 0.0);
  CHECK(penalty_generic(net, data, 0.5) > 0.0);
}

TEST_CASE("penalty scales with sigma squared") {
  const auto net = random_gru(3, 3, 4, 2, 3, 1.5);
  const auto data = random_sequences(4, 30, 5, 3, 3);
  const double a = penalty_generic(net, data, 0.3);
  const double b = penalty_generic(net, data, 0.6);
  CHECK(b / a == doctest::Approx(4.0).epsilon(1e-12));
  const auto ra = penalty_gru(net, data, 0.3);
  const auto rb = penalty_gru(net, data, 0.6);
  CHECK(rb.total / ra.total == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("penalty does not depend on how the sample is batched") {
  const auto net = random_gru(5, 3, 4, 2, 3, 1.5);
  const auto data = random_sequences(6, 37, 5, 3, 3);
  CHECK(penalty_generic(net, data, 1.0, PenaltyScope::AllNodes, nullptr, 250) ==
        doctest::Approx(penalty_generic(net, data, 1.0, PenaltyScope::AllNodes, nullptr, 4)).epsilon(1e-12));
}

TEST_CASE("GRU penalty factorizes the generic penalty over gates and candidates") {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const auto net = random_gru(seed, 3, 5, 2, 4, 2.0);
    const auto data = random_sequences(seed + 100, 40, 6, 3, 4);
    const double generic = penalty_generic(net, data, 1.0, PenaltyScope::GatesAndCandidates);
    const auto report = penalty_gru(net, data, 1.0);
    CHECK(std::fabs(report.total - generic) <= 1e-8 * generic);
    CHECK(report.total == doctest::Approx(report.pg + report.pc));
    // including the input encoder can only add to the sum
    CHECK(penalty_generic(net, data, 1.0) >= generic);

    // the breakdown covers every (layer, timestep) cell once and sums to the totals
    REQUIRE(report.cells.size() == 2 * 6);
    double pg = 0.0, pc = 0.0;
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
      CHECK(report.cells[i].layer == i / 6);
      CHECK(report.cells[i].timestep == i % 6);
      CHECK(report.cells[i].pg >= 0.0);
      CHECK(report.cells[i].pc >= 0.0);
      pg += report.cells[i].pg;
      pc += report.cells[i].pc;
    }
    CHECK(pg == doctest::Approx(report.pg).epsilon(1e-14));
    CHECK(pc == doctest::Approx(report.pc).epsilon(1e-14));
  }

  // the same identity holds for an NCN network measured with its own temperature
  auto net = random_gru(10, 3, 5, 2, 4, 1.0);
  net.activation = ActivationSpec::ncn(0.3, 1.2);
  const auto data = random_sequences(11, 40, 6, 3, 4);
  const double generic = penalty_generic(net, data, 1.0, PenaltyScope::GatesAndCandidates);
  CHECK(std::fabs(penalty_gru(net, data, 1.0).total - generic) <= 1e-8 * generic);
}

TEST_CASE("penalty factors vanish in the degenerate cases") {
  CHECK(pc_term(1.0, 0.25) == 0.0);
  CHECK(pg_term(0.7, 0.7, 0.25) == 0.0);
  CHECK(pg_term(1.0, 0.0, 0.25) == doctest::Approx(0.0625));
  CHECK(pc_term(0.0, 0.25) == doctest::Approx(0.0625));

  // Gate weights so large that every gate is exactly 1: the candidate term
  // vanishes because no candidate reaches the hidden state.
  auto net = random_gru(12, 3, 4, 1, 3, 1.0);
  auto& stack = std::get<GruStack>(net.body);
  stack.layers[0].gate.shadow.fill(1e4);
  const auto data = random_sequences(13, 20, 5, 3, 3);
  const auto report = penalty_gru(net, data, 1.0);
  CHECK(report.pc == 0.0);
  CHECK(report.pg >= 0.0);
}

TEST_CASE("penalty matches the second-order effect of noise") {
  // E_n[L(x + n)] - L(x) ~ (sigma^2 / 2) tr(H). The squared-gradient form
  // equals that trace in expectation over labels drawn from the model itself,
  // so both sides are weighted by the model's class probabilities.
  const auto net = random_gru(14, 1, 2, 1, 2, 1.5);
  REQUIRE(parameter_count(net) <= 100);
  RngStream xr(15);
  const Tensor x = gaussian(xr, 0.0, 1.0, {2, 1});
  const double sigma = 0.01;
  const auto w = prepare_weights(net);

  Dataset one = repeated(x, 0, 1);
  RngStream unused(0);
  const auto clean = forward(net, w, one.batch(0, 1), ActivationSpec::fp_sigmoid(), unused);
  const Tensor probs = softmax_rows(logits_of(clean));

  constexpr std::size_t kCopies = 1000, kBatches = 100;  // 1e5 noise draws per label
  double mc = 0.0, predicted = 0.0;
  for (int y = 0; y < 2; ++y) {
    const Dataset copies = repeated(x, y, kCopies);
    const Batch batch = copies.batch(0, kCopies);
    std::vector<Tensor> grads;
    const auto clean_trace = forward(net, w, batch, ActivationSpec::fp_sigmoid(), unused);
    double clean_loss = 0.0;
    const auto clean_grads = std::get<GruStackBackward>(
        backward(net, w, clean_trace, batch, ActivationSpec::fp_sigmoid(), 1.0, grads, &clean_loss));
    RngStream noise(16, static_cast<std::uint64_t>(y));
    double excess = 0.0;
    for (std::size_t k = 0; k < kBatches; ++k) {
      const auto tr = forward(net, w, batch, ActivationSpec::fp_sigmoid(sigma), noise);
      const double noisy = cross_entropy(logits_of(tr), batch.labels, 1.0, nullptr);
      // subtracting the first-order term leaves the second-order effect with far less variance
      excess += noisy - clean_loss - dot_noise(std::get<GruStackTrace>(tr), clean_grads);
    }
    const double p = probs[static_cast<std::size_t>(y)];
    mc += p * excess / static_cast<double>(kCopies * kBatches);
    predicted += p * penalty_generic(net, repeated(x, y, 1), sigma);
  }
  INFO("monte carlo " << mc << " penalty " << predicted);
  CHECK(predicted > 0.0);
  CHECK(std::fabs(mc - predicted) <= 0.1 * predicted);
}

TEST_CASE("penalty configuration errors") {
  auto net = random_gru(17, 3, 4, 1, 3, 1.0);
  const auto data = random_sequences(18, 10, 4, 3, 3);
  net.activation = ActivationSpec::nbn(0.0);
  CHECK_THROWS_AS(penalty_generic(net, data, 1.0), ConfigurationError);
  CHECK_THROWS_AS(penalty_gru(net, data, 1.0), ConfigurationError);
  const auto step = ActivationSpec::step();
  net.activation = ActivationSpec::fp_sigmoid();
  CHECK_THROWS_AS(penalty_generic(net, data, 1.0, PenaltyScope::AllNodes, &step), ConfigurationError);
  const auto noisy = ActivationSpec::ncn(0.3, 0.5);
  CHECK_THROWS_AS(penalty_generic(net, data, 1.0, PenaltyScope::AllNodes, &noisy), ConfigurationError);
  CHECK_THROWS_AS(penalty_generic(net, Dataset{}, 1.0), ParameterError);

  CHECK(measurement_activation(ActivationSpec::ncn(0.3, 1.6)) == ActivationSpec::ncn(0.3, 0.0));
  CHECK(measurement_activation(ActivationSpec::sbn(2.0)) == ActivationSpec::ncn(0.5, 0.0));
  CHECK(measurement_activation(ActivationSpec::fp_sigmoid(0.4)) == ActivationSpec::fp_sigmoid(0.0));

  RngStream rng(19);
  ConvNetConfig cc;
  cc.in_h = cc.in_w = 12;
  cc.conv_channels = {2};
  cc.kernel = 3;
  cc.fc_hidden = {5};
  cc.num_classes = 3;
  const auto conv = make_conv_net(cc, rng);
  Dataset images;
  for (int i = 0; i < 6; ++i) {
    images.inputs.push_back(bernoulli(rng, 0.4, {144}));
    images.labels.push_back(i % 3);
  }
  CHECK(penalty_generic(conv, images, 1.0) > 0.0);
  CHECK_THROWS_AS(penalty_gru(conv, images, 1.0), ConfigurationError);
  CHECK_THROWS_AS(penalty_generic(conv, images, 1.0, PenaltyScope::GatesAndCandidates), ConfigurationError);
}

TEST_CASE("normalization against a reference network") {
  const auto data = random_sequences(20, 30, 5, 3, 3);
  const auto ref = penalty_gru(random_gru(21, 3, 4, 2, 3, 1.0), data, 1.0);
  auto other = penalty_gru(random_gru(22, 3, 4, 2, 3, 2.0), data, 1.0);
  normalize(other, ref);
  CHECK(other.normalized_total == doctest::Approx(other.total / ref.total));
  auto self = ref;
  normalize(self, ref);
  CHECK(self.normalized_total == 1.0);
  PenaltyReport zero;
  CHECK_THROWS_AS(normalize(other, zero), ParameterError);
}
