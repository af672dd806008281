// Command-line front end: train / eval-sweep / penalty / pim-sim / export-weights.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "nna/errors.hpp"
#include "nna/harness.hpp"

using namespace nna;

namespace {

ExperimentConfig load(const std::string& path, const CLI::App& sub, std::uint64_t seed) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_experiment_config(path);
  if (sub.count("--seed")) cfg.seed = seed;
  cfg.validate();
  return cfg;
}

std::string default_path(const ExperimentConfig& cfg, const std::string& suffix) {
  return (std::filesystem::path(cfg.output_dir) / (cfg.name + suffix)).string();
}

void say(const std::string& what, const std::string& path) { std::cout << what << ": " << path << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noisy neuron annealing: training, noise sweeps, penalties and PIM chip simulation"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Pretrain in full precision, then fine-tune with NNA or STE");
  std::string train_config, train_out, train_fp_in, train_fp_out, train_method;
  std::uint64_t train_seed = 0;
  train->add_option("-c,--config", train_config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--seed", train_seed, "Override the experiment seed");
  train->add_option("--method", train_method, "Override training.method (NNA, STE, FP)");
  train->add_option("-o,--out", train_out, "Checkpoint path (default <output_dir>/<name>.ckpt)");
  train->add_option("--from-fp", train_fp_in, "Skip pretraining and start from this FP checkpoint")
      ->check(CLI::ExistingFile);
  train->add_option("--fp-out", train_fp_out, "Also save the FP checkpoint here");

  // eval-sweep
  auto* sweep = app.add_subcommand("eval-sweep", "Accuracy under evaluation noise for a list of sigma values");
  std::string sweep_config, sweep_ckpt, sweep_out, sweep_mode;
  std::vector<double> sweep_sigmas;
  std::size_t sweep_repeats = 0;
  std::uint64_t sweep_seed = 0;
  sweep->add_option("-c,--config", sweep_config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  sweep->add_option("--checkpoint", sweep_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--sigmas", sweep_sigmas, "sigma_eval values (overrides eval.sigmas)")->delimiter(',');
  sweep->add_option("--repeats", sweep_repeats, "Noise seeds per sigma (overrides eval.repeats)");
  sweep->add_option("--mode", sweep_mode, "NBN or FP_SIGMOID (overrides eval.mode)");
  sweep->add_option("--seed", sweep_seed, "Override the experiment seed");
  sweep->add_option("-o,--out", sweep_out, "CSV path (default <output_dir>/<name>.sweep.csv)");

  // penalty
  auto* pen = app.add_subcommand("penalty", "Noise penalty of trained GRUs, normalized to a reference");
  std::string pen_config, pen_out, pen_cells_out, pen_reference;
  std::vector<std::string> pen_ckpts;
  double pen_sigma = 0.0;
  std::uint64_t pen_seed = 0;
  pen->add_option("-c,--config", pen_config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  pen->add_option("--checkpoint", pen_ckpts, "NAME=PATH of a network to measure (repeatable)")->required();
  pen->add_option("--reference", pen_reference, "NAME of the reference network (default: the first)");
  pen->add_option("--sigma", pen_sigma, "Noise STD (default penalty.sigma, or sigma_L of the reference)");
  pen->add_option("--seed", pen_seed, "Override the experiment seed");
  pen->add_option("-o,--out", pen_out, "CSV path (default <output_dir>/<name>.penalty.csv)");
  pen->add_option("--cells-out", pen_cells_out, "Per-layer, per-timestep breakdown CSV");

  // pim-sim
  auto* pim = app.add_subcommand("pim-sim", "Fabricate a population of noisy chips and measure their accuracy");
  std::string pim_config, pim_ckpt, pim_out, pim_profile, pim_polarity;
  double pim_offset = -1.0, pim_white = -1.0;
  std::size_t pim_chips = 0;
  std::uint64_t pim_seed = 0;
  pim->add_option("-c,--config", pim_config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  pim->add_option("--checkpoint", pim_ckpt, "Quantized checkpoint")->required()->check(CLI::ExistingFile);
  pim->add_option("--profile", pim_profile, "PCM, RERAM, CMOS-MLC or IDEAL (overrides pim.profile)");
  pim->add_option("--polarity", pim_polarity, "FIXED or FLIPPING (overrides pim.polarity)");
  pim->add_option("--offset-std", pim_offset, "Sense-amp offset STD in I_fs (overrides pim.offset_std)");
  pim->add_option("--white-std", pim_white, "White-noise STD in I_fs (overrides pim.white_std)");
  pim->add_option("--chips", pim_chips, "Number of chips (overrides pim.num_chips)");
  pim->add_option("--seed", pim_seed, "Override the experiment seed");
  pim->add_option("-o,--out", pim_out, "CSV path (default <output_dir>/<name>.chips.csv)");

  // export-weights
  auto* exp = app.add_subcommand("export-weights", "Write quantized-only weights and the cell-pair dump");
  std::string exp_ckpt, exp_out;
  exp->add_option("--checkpoint", exp_ckpt, "Quantized checkpoint")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", exp_out, "Output prefix: writes PREFIX.weights.ckpt and PREFIX.cells.csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      ExperimentConfig cfg = load(train_config, *train, train_seed);
      if (!train_method.empty()) {
        cfg.training.method = train_method;
        cfg.validate();
      }
      const auto data = load_task(cfg.task);
      const Checkpoint fp = train_fp_in.empty() ? pretrain(cfg, data) : load_checkpoint(train_fp_in);
      if (!train_fp_out.empty()) {
        save_checkpoint(fp, train_fp_out);
        say("fp checkpoint", train_fp_out);
      }
      const PipelineResult result = finetune(cfg, fp, data);
      const std::string out = train_out.empty() ? default_path(cfg, ".ckpt") : train_out;
      save_checkpoint(result.checkpoint, out);
      write_file_atomic(out + ".log.csv", training_log_csv(result.stages));
      write_file_atomic(out + ".config.json", dump_experiment_config(cfg));
      say("checkpoint", out);
      return 0;
    }

    if (*sweep) {
      ExperimentConfig cfg = load(sweep_config, *sweep, sweep_seed);
      if (!sweep_sigmas.empty()) cfg.eval.sigmas = sweep_sigmas;
      if (sweep_repeats) cfg.eval.repeats = sweep_repeats;
      if (!sweep_mode.empty()) cfg.eval.mode = sweep_mode == "NBN" ? EvalMode::Nbn : EvalMode::FpSigmoid;
      if (!sweep_mode.empty() && sweep_mode != "NBN" && sweep_mode != "FP_SIGMOID") {
        throw ConfigError("eval.mode", "must be NBN or FP_SIGMOID");
      }
      cfg.validate();
      const auto data = load_task(cfg.task);
      const Checkpoint ckpt = load_checkpoint(sweep_ckpt);
      const auto rows =
          eval_sweep(ckpt.net, split_named(data, cfg.eval.split), cfg.eval.sigmas, cfg.eval.repeats, cfg.seed,
                     cfg.eval.mode);
      const std::string out = sweep_out.empty() ? default_path(cfg, ".sweep.csv") : sweep_out;
      write_file_atomic(out, sweep_csv(rows));
      say("sweep", out);
      return 0;
    }

    if (*pen) {
      ExperimentConfig cfg = load(pen_config, *pen, pen_seed);
      const auto data = load_task(cfg.task);
      const Dataset& split = split_named(data, cfg.penalty.split);
      const Dataset sample = split.head(cfg.penalty.examples);
      std::vector<std::pair<std::string, Checkpoint>> nets;
      for (const auto& spec : pen_ckpts) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--checkpoint", "expected NAME=PATH, got " + spec);
        nets.emplace_back(spec.substr(0, eq), load_checkpoint(spec.substr(eq + 1)));
      }
      std::size_t ref = 0;
      if (!pen_reference.empty()) {
        ref = nets.size();
        for (std::size_t i = 0; i < nets.size(); ++i)
          if (nets[i].first == pen_reference) ref = i;
        if (ref == nets.size()) throw ConfigError("--reference", "no checkpoint named " + pen_reference);
      }
      double sigma = pen->count("--sigma") ? pen_sigma : cfg.penalty.sigma;
      if (sigma == 0.0) sigma = derive_sigma_L(nets[ref].second);
      std::vector<NamedPenalty> rows;
      for (const auto& [name, ck] : nets) rows.push_back({name, penalty_gru(ck.net, sample, sigma)});
      const PenaltyReport reference = rows[ref].report;
      for (auto& r : rows) normalize(r.report, reference);
      const std::string out = pen_out.empty() ? default_path(cfg, ".penalty.csv") : pen_out;
      write_file_atomic(out, penalty_csv(rows));
      say("penalty", out);
      if (!pen_cells_out.empty()) {
        write_file_atomic(pen_cells_out, penalty_cells_csv(rows));
        say("penalty cells", pen_cells_out);
      }
      return 0;
    }

    if (*pim) {
      ExperimentConfig cfg = load(pim_config, *pim, pim_seed);
      if (!pim_profile.empty()) cfg.pim.profile = pim_profile;
      if (!pim_polarity.empty()) cfg.pim.polarity = polarity_from_string(pim_polarity);
      if (pim->count("--offset-std")) cfg.pim.offset_std = pim_offset;
      if (pim->count("--white-std")) cfg.pim.white_std = pim_white;
      if (pim_chips) cfg.pim.num_chips = pim_chips;
      cfg.validate();
      const auto data = load_task(cfg.task);
      const Checkpoint ckpt = load_checkpoint(pim_ckpt);
      const ChipStudy study = chip_population_study(ckpt, pim_noise(cfg.pim), cfg.pim.num_chips,
                                                    split_named(data, cfg.pim.split), cfg.pim.base_seed);
      const std::string out = pim_out.empty() ? default_path(cfg, ".chips.csv") : pim_out;
      write_file_atomic(out, chip_csv(study, cfg.pim));
      std::cout << "chips " << study.accuracies.size() << " mean " << study.mean << " std "
                << (study.std_defined ? format_double(study.std) : std::string("n/a")) << "\n";
      say("chips", out);
      return 0;
    }

    if (*exp) {
      const Checkpoint ckpt = load_checkpoint(exp_ckpt);
      const std::string cells = cell_pair_csv(ckpt);
      save_checkpoint(strip_shadow_weights(ckpt), exp_out + ".weights.ckpt");
      write_file_atomic(exp_out + ".cells.csv", cells);
      say("weights", exp_out + ".weights.ckpt");
      say("cells", exp_out + ".cells.csv");
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
