#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nna/checkpoint.hpp"
#include "nna/dataset.hpp"
#include "nna/optimizer.hpp"

namespace nna {

/// One stage of a training pipeline. A MULTILEVEL weight_quant with alpha = 0
/// means "select alpha from the incoming weights"; once a matrix has an alpha
/// for a given level count it stays frozen for later stages.
struct TrainStage {
  std::string name;
  ActivationSpec activation;
  QuantSpec weight_quant;
  std::uint32_t epochs = 1;
  OptimizerConfig optimizer;
  /// SBN only: slope at the end of the stage. Values <= 0 keep the slope constant.
  double slope_end = 0.0;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
};

enum class SigmaMode { TwoStage, DirectSmall, DirectLarge, None };

struct SigmaSchedule {
  double sigma_L = 0.0;
  double sigma_S = 0.0;
  SigmaMode mode = SigmaMode::TwoStage;

  void validate() const;
};

/// NCN stages implied by a sigma schedule: TwoStage -> [sigma_L, sigma_S],
/// DirectSmall -> [sigma_S], DirectLarge -> [sigma_L], None -> no stages.
std::vector<TrainStage> nna_stages(const SigmaSchedule& schedule, double tau, const QuantSpec& quant,
                                   std::uint32_t epochs_large, std::uint32_t epochs_small,
                                   const OptimizerConfig& opt = {}, double grad_clip = 0.0);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Gradient norms above this abort training (exploding-gradient guard).
  double explode_threshold = 1e6;
  /// Training examples used to measure pre-activation statistics after FP stages.
  std::size_t stats_examples = 1000;
};

struct StageMetrics {
  std::string name;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double max_grad_norm = 0.0;
};

struct PipelineResult {
  Checkpoint checkpoint;
  std::vector<StageMetrics> stages;
};

/// Divergence or exploding gradients; carries the last finite checkpoint.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Slope in effect during epoch `epoch` (1-based) of a linear start -> end schedule over `epochs` epochs.
double slope_at(double start, double end, std::uint32_t epoch, std::uint32_t epochs);

/// Full-precision sigmoid stage without noise, followed by pre-activation statistics.
TrainStage fp_stage(std::uint32_t epochs, const OptimizerConfig& opt = {}, double grad_clip = 0.0);
TrainStage ncn_stage(const std::string& name, double tau, double sigma, const QuantSpec& quant, std::uint32_t epochs,
                     const OptimizerConfig& opt = {}, double grad_clip = 0.0);
TrainStage ste_stage(const std::string& name, double slope_start, double slope_end, const QuantSpec& quant,
                     std::uint32_t epochs, const OptimizerConfig& opt = {}, double grad_clip = 0.0);

/// Measures per-group and pooled pre-activation STD on a noise-free FP pass.
void record_preact_stats(Checkpoint& ckpt, const Dataset& data, std::size_t max_examples, std::size_t batch_size);

/// sigma_L = 0.2 x pooled pre-activation STD. Throws ConfigurationError when the
/// checkpoint carries no statistics.
double derive_sigma_L(const Checkpoint& ckpt);
double derive_sigma_L(double pooled_std);

/// Runs one stage in place on `ckpt`.
StageMetrics train_stage(Checkpoint& ckpt, const TrainStage& stage, std::size_t stage_index, const Dataset& train,
                         const TrainConfig& cfg);

/// Stages run in order, each starting from its predecessor's weights.
PipelineResult run_pipeline(Checkpoint init, const std::vector<TrainStage>& stages, const Dataset& train,
                            const TrainConfig& cfg);

Checkpoint pretrain_fp(Checkpoint init, const Dataset& train, std::uint32_t epochs, const TrainConfig& cfg,
                       const OptimizerConfig& opt = {}, double grad_clip = 0.0);

/// STE training with an SBN slope that is constant or linearly annealed across epochs.
Checkpoint train_ste(Checkpoint init, const Dataset& train, double slope_start, double slope_end,
                     const QuantSpec& quant, std::uint32_t epochs, const TrainConfig& cfg,
                     const OptimizerConfig& opt = {}, double grad_clip = 0.0);

/// Fraction of correct predictions under `act`, drawing noise from `rng`.
double accuracy(const NetworkGraph& net, const Dataset& data, const ActivationSpec& act, RngStream& rng,
                std::size_t batch_size = 250);

enum class EvalMode { Nbn, FpSigmoid };

struct SweepRow {
  double sigma_eval = 0.0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  double min_acc = 0.0;
  double max_acc = 0.0;
  std::size_t n_repeats = 0;
};

/// Accuracy under evaluation noise for every sigma in the list, `repeats`
/// independent noise seeds each. Rows follow the order of `sigmas`.
std::vector<SweepRow> eval_sweep(const NetworkGraph& net, const Dataset& data, const std::vector<double>& sigmas,
                                 std::size_t repeats, std::uint64_t seed, EvalMode mode = EvalMode::Nbn);

}  // namespace nna
