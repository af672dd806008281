#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nna/penalty.hpp"
#include "nna/pim.hpp"
#include "nna/trainer.hpp"

namespace nna {

/// An experiment config failed validation; `field` is the dotted key path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct TaskConfig {
  std::string kind = "SYNTH-SEQ";  // SYNTH-SEQ or MNIST
  SynthSeqTask synth;
  std::string mnist_images = "data/mnist/images-idx3-ubyte.gz";
  std::string mnist_labels = "data/mnist/labels-idx1-ubyte.gz";
  /// Examples read from the IDX files; the first mnist_train train, the rest test.
  std::size_t mnist_limit = 10000;
  std::size_t mnist_train = 8000;
};

struct ArchitectureConfig {
  std::string kind = "GRU";  // GRU or CONV
  std::size_t input_units = 32;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  bool input_bias = false;
  std::vector<std::size_t> conv_channels{6, 16};
  std::size_t kernel = 5;
  std::vector<std::size_t> fc_hidden{120};
};

struct TrainingConfig {
  std::string method = "NNA";  // NNA, STE or FP
  std::uint32_t fp_epochs = 6;
  /// sigma_L = 0 means "derive from the FP checkpoint's pre-activation STD".
  SigmaSchedule schedule{0.0, 0.3, SigmaMode::TwoStage};
  std::uint32_t large_epochs = 5;
  std::uint32_t small_epochs = 5;
  double tau = 0.3;
  /// Weight levels for fine-tuning; 0 keeps full-precision weights.
  int weight_levels = 7;
  double ste_slope_start = 1.0;
  double ste_slope_end = 0.0;  // <= 0: constant slope
  std::uint32_t ste_epochs = 10;
  bool ste_fp_weights = true;
  OptimizerConfig optimizer{OptimizerKind::Adam, 1e-2};
  /// Optimizer for the fine-tuning stages; defaults to `optimizer`.
  OptimizerConfig finetune_optimizer{OptimizerKind::Adam, 1e-2};
  /// Learning-rate multiplier applied in the small-sigma NNA stage.
  double small_lr_scale = 1.0;
  double grad_clip = 5.0;
  std::size_t batch_size = 32;
  double explode_threshold = 1e6;
};

struct EvalConfig {
  std::vector<double> sigmas{0.0, 0.4, 0.8, 1.6};
  std::size_t repeats = 5;
  EvalMode mode = EvalMode::Nbn;
  std::string split = "test";
};

struct PenaltyConfig {
  /// 0 means "use sigma_L of the reference checkpoint".
  double sigma = 0.0;
  std::size_t examples = 500;
  std::string split = "validation";
};

struct PimConfig {
  std::string profile = "PCM";
  double offset_std = 0.02;
  double white_std = 0.02;
  Polarity polarity = Polarity::Flipping;
  std::size_t num_chips = 20;
  std::uint64_t base_seed = 1000;
  std::string split = "test";
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  TaskConfig task;
  ArchitectureConfig architecture;
  TrainingConfig training;
  EvalConfig eval;
  PenaltyConfig penalty;
  PimConfig pim;
  std::string output_dir = "runs";

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
};

/// Parses JSON text. Unknown keys and wrongly typed values are ConfigErrors.
/// Missing keys keep their defaults. The result is validated.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::string& path);
/// Every field, as JSON that parse_experiment_config reads back unchanged.
std::string dump_experiment_config(const ExperimentConfig& cfg);

DatasetSplits load_task(const TaskConfig& task);
const Dataset& split_named(const DatasetSplits& splits, const std::string& name);

/// Fresh network for the task, initialized from the experiment seed.
Checkpoint initial_checkpoint(const ExperimentConfig& cfg, const DatasetSplits& data);
TrainConfig train_config(const ExperimentConfig& cfg);
/// Full-precision pretraining with pre-activation statistics.
Checkpoint pretrain(const ExperimentConfig& cfg, const DatasetSplits& data);
double resolved_sigma_L(const ExperimentConfig& cfg, const Checkpoint& fp);
/// Stages that follow pretraining for the configured method.
std::vector<TrainStage> finetune_stages(const ExperimentConfig& cfg, const Checkpoint& fp);
PipelineResult finetune(const ExperimentConfig& cfg, const Checkpoint& fp, const DatasetSplits& data);

/// PIM noise settings of the config.
PimNoiseConfig pim_noise(const PimConfig& pim);

// CSV outputs. Headers are fixed and described by the files under schemas/.
extern const std::vector<std::string> kSweepColumns;
extern const std::vector<std::string> kPenaltyColumns;
extern const std::vector<std::string> kPenaltyCellColumns;
extern const std::vector<std::string> kChipColumns;
extern const std::vector<std::string> kTrainingLogColumns;
extern const std::vector<std::string> kCellPairColumns;

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

std::string sweep_csv(const std::vector<SweepRow>& rows);

struct NamedPenalty {
  std::string network;
  PenaltyReport report;
};
std::string penalty_csv(const std::vector<NamedPenalty>& rows);
std::string penalty_cells_csv(const std::vector<NamedPenalty>& rows);
std::string chip_csv(const ChipStudy& study, const PimConfig& pim);
std::string training_log_csv(const std::vector<StageMetrics>& stages);

/// The checkpoint with every shadow weight replaced by its quantized forward
/// copy, so no full-precision weight remains. Inference is unchanged.
Checkpoint strip_shadow_weights(const Checkpoint& ckpt);
/// Cell-pair encoding of every in-array matrix: row, col, level+, level-.
std::string cell_pair_csv(const Checkpoint& ckpt);

}  // namespace nna
