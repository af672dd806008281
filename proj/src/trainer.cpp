#include "nna/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iostream>
#include <map>

#include "nna/errors.hpp"

namespace nna {
namespace {

bool is_fp_baseline(const TrainStage& s) {
  return s.activation.kind == ActivationKind::FpSigmoid && s.activation.sigma_eval == 0.0 &&
         s.weight_quant.scheme == QuantScheme::Fp;
}

void apply_weight_quant(NetworkGraph& net, const QuantSpec& q) {
  for (auto& p : parameters(net)) {
    if (!p.in_array) continue;
    auto& spec = p.weight->spec;
    if (q.scheme != QuantScheme::Multilevel) {
      spec = q;
      continue;
    }
    if (spec.scheme == QuantScheme::Multilevel && spec.levels == q.levels && spec.alpha > 0.0) continue;  // frozen
    spec = QuantSpec::multilevel(q.levels, q.alpha > 0.0 ? q.alpha : select_alpha(p.weight->shadow));
  }
}

bool weights_finite(const NetworkGraph& net) {
  for (const auto& p : parameters(net))
    if (!p.weight->shadow.all_finite()) return false;
  return true;
}

std::vector<std::size_t> permutation(std::size_t n, RngStream rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Fisher-Yates on our own stream keeps the order identical on every platform
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_u64() % i]);
  return idx;
}

}  // namespace

void SigmaSchedule::validate() const {
  if (!(sigma_S >= 0.0) || !(sigma_L >= sigma_S)) throw ParameterError("sigma schedule needs sigma_L >= sigma_S >= 0");
}

std::vector<TrainStage> nna_stages(const SigmaSchedule& schedule, double tau, const QuantSpec& quant,
                                   std::uint32_t epochs_large, std::uint32_t epochs_small, const OptimizerConfig& opt,
                                   double grad_clip) {
  schedule.validate();
  std::vector<TrainStage> out;
  const bool large = schedule.mode == SigmaMode::TwoStage || schedule.mode == SigmaMode::DirectLarge;
  const bool small = schedule.mode == SigmaMode::TwoStage || schedule.mode == SigmaMode::DirectSmall;
  if (large) out.push_back(ncn_stage("nna-large", tau, schedule.sigma_L, quant, epochs_large, opt, grad_clip));
  if (small) out.push_back(ncn_stage("nna-small", tau, schedule.sigma_S, quant, epochs_small, opt, grad_clip));
  return out;
}

double slope_at(double start, double end, std::uint32_t epoch, std::uint32_t epochs) {
  if (end <= 0.0 || epochs == 0) return start;
  return start + (end - start) * static_cast<double>(epoch) / static_cast<double>(epochs);
}

TrainStage fp_stage(std::uint32_t epochs, const OptimizerConfig& opt, double grad_clip) {
  return {"fp", ActivationSpec::fp_sigmoid(), QuantSpec::fp(), epochs, opt, 0.0, grad_clip};
}

TrainStage ncn_stage(const std::string& name, double tau, double sigma, const QuantSpec& quant, std::uint32_t epochs,
                     const OptimizerConfig& opt, double grad_clip) {
  return {name, ActivationSpec::ncn(tau, sigma), quant, epochs, opt, 0.0, grad_clip};
}

TrainStage ste_stage(const std::string& name, double slope_start, double slope_end, const QuantSpec& quant,
                     std::uint32_t epochs, const OptimizerConfig& opt, double grad_clip) {
  return {name, ActivationSpec::sbn(slope_start), quant, epochs, opt, slope_end, grad_clip};
}

void record_preact_stats(Checkpoint& ckpt, const Dataset& data, std::size_t max_examples, std::size_t batch_size) {
  const std::size_t n = std::min(max_examples, data.size());
  if (n == 0) throw ParameterError("record_preact_stats: no examples");
  struct Acc {
    std::uint64_t count = 0;
    double sum = 0.0, sumsq = 0.0;
  };
  std::map<std::string, Acc> groups;
  std::vector<std::string> order;
  const auto w = prepare_weights(ckpt.net);
  RngStream rng(0);
  for (std::size_t b = 0; b < n; b += batch_size) {
    const auto trace = forward(ckpt.net, w, data.batch(b, std::min(n, b + batch_size)), ActivationSpec::fp_sigmoid(), rng);
    for_each_preactivation(trace, [&](const std::string& name, const Tensor& pre) {
      auto [it, inserted] = groups.try_emplace(name);
      if (inserted) order.push_back(name);
      for (double v : pre.values()) {
        ++it->second.count;
        it->second.sum += v;
        it->second.sumsq += v * v;
      }
    });
  }
  ckpt.preact_stats.clear();
  Acc total;
  for (const auto& name : order) {
    const auto& a = groups[name];
    const double mean = a.sum / static_cast<double>(a.count);
    const double var = std::max(0.0, a.sumsq / static_cast<double>(a.count) - mean * mean);
    ckpt.preact_stats.push_back({name, a.count, mean, std::sqrt(var)});
    total.count += a.count;
    total.sum += a.sum;
    total.sumsq += a.sumsq;
  }
  const double mean = total.sum / static_cast<double>(total.count);
  ckpt.pooled_preact_std = std::sqrt(std::max(0.0, total.sumsq / static_cast<double>(total.count) - mean * mean));
  ckpt.has_preact_stats = true;
}

double derive_sigma_L(double pooled_std) {
  if (!(pooled_std >= 0.0)) throw ParameterError("pooled pre-activation STD must be nonnegative");
  if (pooled_std == 0.0) std::cerr << "warning: pooled pre-activation STD is 0, sigma_L degenerates to 0\n";
  return 0.2 * pooled_std;
}

double derive_sigma_L(const Checkpoint& ckpt) {
  if (!ckpt.has_preact_stats) {
    throw ConfigurationError("checkpoint has no pre-activation statistics; run FP pretraining first");
  }
  return derive_sigma_L(ckpt.pooled_preact_std);
}

StageMetrics train_stage(Checkpoint& ckpt, const TrainStage& stage, std::size_t stage_index, const Dataset& train,
                         const TrainConfig& cfg) {
  stage.activation.validate();
  {
    QuantSpec q = stage.weight_quant;
    if (q.scheme == QuantScheme::Multilevel && q.alpha == 0.0) q.alpha = 1.0;  // alpha chosen from the weights later
    q.validate();
  }
  if (!stage.activation.differentiable()) {
    throw ConfigurationError("stage '" + stage.name + "': activation '" + std::string(to_string(stage.activation.kind)) +
                             "' cannot be trained");
  }
  if (cfg.batch_size == 0) throw ParameterError("batch_size must be positive");
  if (train.size() == 0) throw ParameterError("empty training set");

  StageMetrics metrics{stage.name, {}, 0.0};
  apply_weight_quant(ckpt.net, stage.weight_quant);
  auto params = parameters(ckpt.net);
  auto opt = make_optimizer(stage.optimizer);
  const RngStream root = RngStream(cfg.seed).substream({0x7472, stage_index});
  ActivationSpec act = stage.activation;
  std::vector<Tensor> grads;
  double loss_sum = 0.0;

  for (std::uint32_t epoch = 1; epoch <= stage.epochs; ++epoch) {
    Checkpoint last_good = ckpt;
    if (act.kind == ActivationKind::Sbn) act.slope = slope_at(stage.activation.slope, stage.slope_end, epoch, stage.epochs);
    const auto order = permutation(train.size(), root.substream({epoch, 0}));
    loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const Batch batch = train.batch(idx);
      RngStream noise = root.substream({epoch, batch_index + 1});
      const auto w = prepare_weights(ckpt.net);
      const double loss =
          loss_and_gradients(ckpt.net, w, batch, act, noise, 1.0 / static_cast<double>(batch.size()), grads);
      double sq = 0.0;
      for (const auto& g : grads) sq += sum_of_squares(g);
      const double norm = std::sqrt(sq);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        throw TrainingError("stage '" + stage.name + "' diverged (non-finite loss or gradient) in epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(batch_index),
                            std::move(last_good));
      }
      if (norm > cfg.explode_threshold) {
        throw TrainingError("stage '" + stage.name + "': gradient norm " + std::to_string(norm) + " exceeds " +
                                std::to_string(cfg.explode_threshold) + " in epoch " + std::to_string(epoch) +
                                " (slope " + std::to_string(act.slope) + ", tau " + std::to_string(act.tau) + ")",
                            std::move(last_good));
      }
      metrics.max_grad_norm = std::max(metrics.max_grad_norm, norm);
      if (stage.grad_clip > 0.0 && norm > stage.grad_clip) {
        for (auto& g : grads) scale_inplace(g, stage.grad_clip / norm);
      }
      for (std::size_t i = 0; i < params.size(); ++i) quantized_training_step(*params[i].weight, grads[i], *opt, i);
      opt->next_step();
      loss_sum += loss * static_cast<double>(batch.size());
    }
    if (!weights_finite(ckpt.net)) {
      throw TrainingError("stage '" + stage.name + "' produced non-finite weights in epoch " + std::to_string(epoch),
                          std::move(last_good));
    }
    metrics.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
  }
  ckpt.net.activation = act;
  ckpt.provenance.push_back({stage.name, act, stage.weight_quant, stage.epochs, cfg.seed,
                             metrics.epoch_loss.empty() ? 0.0 : metrics.epoch_loss.back()});
  return metrics;
}

PipelineResult run_pipeline(Checkpoint init, const std::vector<TrainStage>& stages, const Dataset& train,
                            const TrainConfig& cfg) {
  PipelineResult result{std::move(init), {}};
  for (std::size_t i = 0; i < stages.size(); ++i) {
    // Numbering stages by the checkpoint's history makes [A, B] in one call
    // identical to B run on the result of [A].
    const std::size_t index = result.checkpoint.provenance.size();
    result.stages.push_back(train_stage(result.checkpoint, stages[i], index, train, cfg));
    if (is_fp_baseline(stages[i])) record_preact_stats(result.checkpoint, train, cfg.stats_examples, 250);
  }
  return result;
}

Checkpoint pretrain_fp(Checkpoint init, const Dataset& train, std::uint32_t epochs, const TrainConfig& cfg,
                       const OptimizerConfig& opt, double grad_clip) {
  return run_pipeline(std::move(init), {fp_stage(epochs, opt, grad_clip)}, train, cfg).checkpoint;
}

Checkpoint train_ste(Checkpoint init, const Dataset& train, double slope_start, double slope_end,
                     const QuantSpec& quant, std::uint32_t epochs, const TrainConfig& cfg, const OptimizerConfig& opt,
                     double grad_clip) {
  return run_pipeline(std::move(init), {ste_stage("ste", slope_start, slope_end, quant, epochs, opt, grad_clip)}, train,
                      cfg)
      .checkpoint;
}

double accuracy(const NetworkGraph& net, const Dataset& data, const ActivationSpec& act, RngStream& rng,
                std::size_t batch_size) {
  if (data.size() == 0) throw ParameterError("accuracy: empty dataset");
  const auto w = prepare_weights(net);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const Batch batch = data.batch(b, std::min(data.size(), b + batch_size));
    const auto pred = predict(net, w, batch, act, rng);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<SweepRow> eval_sweep(const NetworkGraph& net, const Dataset& data, const std::vector<double>& sigmas,
                                 std::size_t repeats, std::uint64_t seed, EvalMode mode) {
  if (repeats == 0) throw ParameterError("eval_sweep: repeats must be >= 1");
  std::vector<SweepRow> rows;
  for (double sigma : sigmas) {
    if (!(sigma >= 0.0)) throw ParameterError("eval_sweep: sigma_eval must be nonnegative");
    const auto act = mode == EvalMode::Nbn ? ActivationSpec::nbn(sigma) : ActivationSpec::fp_sigmoid(sigma);
    std::vector<double> accs;
    for (std::size_t r = 0; r < repeats; ++r) {
      // keyed by the sigma value itself, so a row does not depend on its neighbours in the list
      RngStream rng = RngStream(seed).substream({std::bit_cast<std::uint64_t>(sigma), r});
      accs.push_back(accuracy(net, data, act, rng));
    }
    SweepRow row;
    row.sigma_eval = sigma;
    row.n_repeats = repeats;
    double sum = 0.0;
    for (double a : accs) sum += a;
    row.mean_acc = sum / static_cast<double>(repeats);
    double sq = 0.0;
    for (double a : accs) sq += (a - row.mean_acc) * (a - row.mean_acc);
    row.std_acc = repeats > 1 ? std::sqrt(sq / static_cast<double>(repeats - 1)) : 0.0;
    row.min_acc = *std::min_element(accs.begin(), accs.end());
    row.max_acc = *std::max_element(accs.begin(), accs.end());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace nna
