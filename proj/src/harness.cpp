#include "nna/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <memory>
#include <set>
#include <type_traits>

#include "nna/errors.hpp"

namespace nna {
namespace {

using json = nlohmann::ordered_json;

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Int>
    requires std::is_integral_v<Int>
  void read(const std::string& key, Int& out) {
    if (const json* v = find(key)) out = as_integer<Int>(*v, field(key));
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_integer<std::size_t>((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }

  /// Child object, or nullptr when absent.
  std::unique_ptr<ObjectReader> child(const std::string& key) {
    const json* v = find(key);
    return v ? std::make_unique<ObjectReader>(*v, field(key)) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(field(key), "unknown key");
  }

 private:
  template <class Int>
  static Int as_integer(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where, "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
      if (v.get<std::int64_t>() < 0) throw ConfigError(where, "must be nonnegative");
    }
    return static_cast<Int>(v.get<std::int64_t>());
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class Enum>
Enum read_enum(ObjectReader& r, const std::string& key, Enum current, Enum (*parse)(const std::string&)) {
  std::string text;
  if (!r.find(key)) return current;
  r.read(key, text);
  try {
    return parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.field(key), e.what());
  }
}

SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "TWO_STAGE") return SigmaMode::TwoStage;
  if (s == "DIRECT_SMALL") return SigmaMode::DirectSmall;
  if (s == "DIRECT_LARGE") return SigmaMode::DirectLarge;
  if (s == "NONE") return SigmaMode::None;
  throw ParameterError("unknown sigma schedule mode '" + s + "' (TWO_STAGE, DIRECT_SMALL, DIRECT_LARGE, NONE)");
}

std::string to_string(SigmaMode m) {
  switch (m) {
    case SigmaMode::TwoStage: return "TWO_STAGE";
    case SigmaMode::DirectSmall: return "DIRECT_SMALL";
    case SigmaMode::DirectLarge: return "DIRECT_LARGE";
    case SigmaMode::None: return "NONE";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "NBN") return EvalMode::Nbn;
  if (s == "FP_SIGMOID") return EvalMode::FpSigmoid;
  throw ParameterError("unknown eval mode '" + s + "' (NBN, FP_SIGMOID)");
}

std::string to_string(EvalMode m) { return m == EvalMode::Nbn ? "NBN" : "FP_SIGMOID"; }

OptimizerKind optimizer_kind(const std::string& s) { return optimizer_kind_from_string(s); }

void read_optimizer(ObjectReader& parent, const std::string& key, OptimizerConfig& opt) {
  auto r = parent.child(key);
  if (!r) return;
  opt.kind = read_enum(*r, "kind", opt.kind, optimizer_kind);
  r->read("learning_rate", opt.learning_rate);
  r->read("momentum", opt.momentum);
  r->read("beta1", opt.beta1);
  r->read("beta2", opt.beta2);
  r->read("epsilon", opt.epsilon);
  r->finish();
}

json optimizer_json(const OptimizerConfig& o) {
  return json{{"kind", std::string(to_string(o.kind))}, {"learning_rate", o.learning_rate}, {"momentum", o.momentum},
              {"beta1", o.beta1}, {"beta2", o.beta2}, {"epsilon", o.epsilon}};
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

void require_split(const std::string& name, const std::string& field) {
  require(name == "train" || name == "validation" || name == "test", field, "must be train, validation or test");
}

void validate_optimizer(const OptimizerConfig& o, const std::string& field) {
  require(o.learning_rate > 0.0, field + ".learning_rate", "must be positive");
  require(o.momentum >= 0.0 && o.momentum < 1.0, field + ".momentum", "must be in [0, 1)");
  require(o.beta1 >= 0.0 && o.beta1 < 1.0, field + ".beta1", "must be in [0, 1)");
  require(o.beta2 >= 0.0 && o.beta2 < 1.0, field + ".beta2", "must be in [0, 1)");
  require(o.epsilon > 0.0, field + ".epsilon", "must be positive");
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + '\n';
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!name.empty(), "name", "must not be empty");
  require(task.kind == "SYNTH-SEQ" || task.kind == "MNIST", "task.kind", "must be SYNTH-SEQ or MNIST");
  if (task.kind == "SYNTH-SEQ") {
    try {
      task.synth.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("task.synth", e.what());
    }
  } else {
    require(task.mnist_limit > 0, "task.mnist_limit", "must be positive");
    require(task.mnist_train > 0 && task.mnist_train < task.mnist_limit, "task.mnist_train",
            "must be positive and leave test examples below mnist_limit");
  }

  const auto& a = architecture;
  require(a.kind == "GRU" || a.kind == "CONV", "architecture.kind", "must be GRU or CONV");
  require((a.kind == "GRU") == (task.kind == "SYNTH-SEQ"), "architecture.kind",
          "GRU runs on SYNTH-SEQ and CONV on MNIST");
  if (a.kind == "GRU") {
    require(a.input_units > 0, "architecture.input_units", "must be positive");
    require(a.hidden > 0, "architecture.hidden", "must be positive");
    require(a.layers > 0, "architecture.layers", "must be positive");
  } else {
    require(a.kernel > 0, "architecture.kernel", "must be positive");
    for (auto c : a.conv_channels) require(c > 0, "architecture.conv_channels", "entries must be positive");
    for (auto u : a.fc_hidden) require(u > 0, "architecture.fc_hidden", "entries must be positive");
  }

  const auto& t = training;
  require(t.method == "NNA" || t.method == "STE" || t.method == "FP", "training.method", "must be NNA, STE or FP");
  require(t.tau > 0.0, "training.tau", "must be positive");
  require(t.weight_levels == 0 || (t.weight_levels >= 3 && t.weight_levels % 2 == 1), "training.weight_levels",
          "must be 0 (full precision) or an odd number >= 3");
  require(t.schedule.sigma_S >= 0.0, "training.sigma_schedule.sigma_S", "must be nonnegative");
  require(t.schedule.sigma_L >= 0.0, "training.sigma_schedule.sigma_L", "must be nonnegative (0 derives it)");
  require(t.schedule.sigma_L == 0.0 || t.schedule.sigma_L >= t.schedule.sigma_S, "training.sigma_schedule.sigma_L",
          "must be at least sigma_S");
  require(t.ste_slope_start > 0.0, "training.ste.slope_start", "must be positive");
  require(t.batch_size > 0, "training.batch_size", "must be positive");
  require(t.grad_clip >= 0.0, "training.grad_clip", "must be nonnegative");
  require(t.explode_threshold > 0.0, "training.explode_threshold", "must be positive");
  validate_optimizer(t.optimizer, "training.optimizer");
  validate_optimizer(t.finetune_optimizer, "training.finetune_optimizer");
  require(t.small_lr_scale > 0.0, "training.small_lr_scale", "must be positive");

  require(!eval.sigmas.empty(), "eval.sigmas", "must not be empty");
  for (double s : eval.sigmas) require(s >= 0.0, "eval.sigmas", "entries must be nonnegative");
  require(eval.repeats >= 1, "eval.repeats", "must be at least 1");
  require_split(eval.split, "eval.split");

  require(penalty.sigma >= 0.0, "penalty.sigma", "must be nonnegative (0 uses sigma_L)");
  require(penalty.examples > 0, "penalty.examples", "must be positive");
  require_split(penalty.split, "penalty.split");

  try {
    EnvmProfile::preset(pim.profile);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("pim.profile", e.what());
  }
  require(pim.offset_std >= 0.0, "pim.offset_std", "must be nonnegative");
  require(pim.white_std >= 0.0, "pim.white_std", "must be nonnegative");
  require(pim.num_chips >= 1, "pim.num_chips", "must be at least 1");
  require_split(pim.split, "pim.split");
  require(!output_dir.empty(), "output_dir", "must not be empty");
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader r(root, "");
  r.read("name", cfg.name);
  r.read("seed", cfg.seed);
  r.read("output_dir", cfg.output_dir);

  if (auto t = r.child("task")) {
    t->read("kind", cfg.task.kind);
    if (auto s = t->child("synth")) {
      auto& st = cfg.task.synth;
      s->read("seq_len", st.seq_len);
      s->read("input_dim", st.input_dim);
      s->read("num_classes", st.num_classes);
      s->read("motif_length", st.motif_length);
      s->read("amplitude", st.amplitude);
      s->read("noise_std", st.noise_std);
      s->read("train_size", st.train_size);
      s->read("validation_size", st.validation_size);
      s->read("test_size", st.test_size);
      s->read("seed", st.seed);
      s->finish();
    }
    t->read("mnist_images", cfg.task.mnist_images);
    t->read("mnist_labels", cfg.task.mnist_labels);
    t->read("mnist_limit", cfg.task.mnist_limit);
    t->read("mnist_train", cfg.task.mnist_train);
    t->finish();
  }

  if (auto a = r.child("architecture")) {
    auto& ac = cfg.architecture;
    a->read("kind", ac.kind);
    a->read("input_units", ac.input_units);
    a->read("hidden", ac.hidden);
    a->read("layers", ac.layers);
    a->read("input_bias", ac.input_bias);
    a->read("conv_channels", ac.conv_channels);
    a->read("kernel", ac.kernel);
    a->read("fc_hidden", ac.fc_hidden);
    a->finish();
  }

  if (auto t = r.child("training")) {
    auto& tc = cfg.training;
    t->read("method", tc.method);
    t->read("fp_epochs", tc.fp_epochs);
    if (auto s = t->child("sigma_schedule")) {
      tc.schedule.mode = read_enum(*s, "mode", tc.schedule.mode, sigma_mode_from_string);
      s->read("sigma_L", tc.schedule.sigma_L);
      s->read("sigma_S", tc.schedule.sigma_S);
      s->finish();
    }
    t->read("large_epochs", tc.large_epochs);
    t->read("small_epochs", tc.small_epochs);
    t->read("tau", tc.tau);
    t->read("weight_levels", tc.weight_levels);
    if (auto s = t->child("ste")) {
      s->read("slope_start", tc.ste_slope_start);
      s->read("slope_end", tc.ste_slope_end);
      s->read("epochs", tc.ste_epochs);
      s->read("fp_weights", tc.ste_fp_weights);
      s->finish();
    }
    read_optimizer(*t, "optimizer", tc.optimizer);
    tc.finetune_optimizer = tc.optimizer;
    read_optimizer(*t, "finetune_optimizer", tc.finetune_optimizer);
    t->read("small_lr_scale", tc.small_lr_scale);
    t->read("grad_clip", tc.grad_clip);
    t->read("batch_size", tc.batch_size);
    t->read("explode_threshold", tc.explode_threshold);
    t->finish();
  }

  if (auto e = r.child("eval")) {
    e->read("sigmas", cfg.eval.sigmas);
    e->read("repeats", cfg.eval.repeats);
    cfg.eval.mode = read_enum(*e, "mode", cfg.eval.mode, eval_mode_from_string);
    e->read("split", cfg.eval.split);
    e->finish();
  }

  if (auto p = r.child("penalty")) {
    p->read("sigma", cfg.penalty.sigma);
    p->read("examples", cfg.penalty.examples);
    p->read("split", cfg.penalty.split);
    p->finish();
  }

  if (auto p = r.child("pim")) {
    p->read("profile", cfg.pim.profile);
    p->read("offset_std", cfg.pim.offset_std);
    p->read("white_std", cfg.pim.white_std);
    cfg.pim.polarity = read_enum(*p, "polarity", cfg.pim.polarity, polarity_from_string);
    p->read("num_chips", cfg.pim.num_chips);
    p->read("base_seed", cfg.pim.base_seed);
    p->read("split", cfg.pim.split);
    p->finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) { return parse_experiment_config(read_file(path)); }

std::string dump_experiment_config(const ExperimentConfig& cfg) {
  const auto& s = cfg.task.synth;
  const auto& a = cfg.architecture;
  const auto& t = cfg.training;
  json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["task"] = {{"kind", cfg.task.kind},
               {"synth",
                {{"seq_len", s.seq_len},
                 {"input_dim", s.input_dim},
                 {"num_classes", s.num_classes},
                 {"motif_length", s.motif_length},
                 {"amplitude", s.amplitude},
                 {"noise_std", s.noise_std},
                 {"train_size", s.train_size},
                 {"validation_size", s.validation_size},
                 {"test_size", s.test_size},
                 {"seed", s.seed}}},
               {"mnist_images", cfg.task.mnist_images},
               {"mnist_labels", cfg.task.mnist_labels},
               {"mnist_limit", cfg.task.mnist_limit},
               {"mnist_train", cfg.task.mnist_train}};
  j["architecture"] = {{"kind", a.kind},          {"input_units", a.input_units},
                       {"hidden", a.hidden},      {"layers", a.layers},
                       {"input_bias", a.input_bias}, {"conv_channels", a.conv_channels},
                       {"kernel", a.kernel},      {"fc_hidden", a.fc_hidden}};
  j["training"] = {
      {"method", t.method},
      {"fp_epochs", t.fp_epochs},
      {"sigma_schedule",
       {{"mode", to_string(t.schedule.mode)}, {"sigma_L", t.schedule.sigma_L}, {"sigma_S", t.schedule.sigma_S}}},
      {"large_epochs", t.large_epochs},
      {"small_epochs", t.small_epochs},
      {"tau", t.tau},
      {"weight_levels", t.weight_levels},
      {"ste",
       {{"slope_start", t.ste_slope_start},
        {"slope_end", t.ste_slope_end},
        {"epochs", t.ste_epochs},
        {"fp_weights", t.ste_fp_weights}}},
      {"optimizer", optimizer_json(t.optimizer)},
      {"finetune_optimizer", optimizer_json(t.finetune_optimizer)},
      {"small_lr_scale", t.small_lr_scale},
      {"grad_clip", t.grad_clip},
      {"batch_size", t.batch_size},
      {"explode_threshold", t.explode_threshold}};
  j["eval"] = {{"sigmas", cfg.eval.sigmas},
               {"repeats", cfg.eval.repeats},
               {"mode", to_string(cfg.eval.mode)},
               {"split", cfg.eval.split}};
  j["penalty"] = {{"sigma", cfg.penalty.sigma}, {"examples", cfg.penalty.examples}, {"split", cfg.penalty.split}};
  j["pim"] = {{"profile", cfg.pim.profile},     {"offset_std", cfg.pim.offset_std},
              {"white_std", cfg.pim.white_std}, {"polarity", to_string(cfg.pim.polarity)},
              {"num_chips", cfg.pim.num_chips}, {"base_seed", cfg.pim.base_seed},
              {"split", cfg.pim.split}};
  return j.dump(2) + "\n";
}

DatasetSplits load_task(const TaskConfig& task) {
  if (task.kind == "SYNTH-SEQ") return gen_synth_seq(task.synth);
  if (task.kind != "MNIST") throw ConfigError("task.kind", "must be SYNTH-SEQ or MNIST");
  const Dataset all = load_mnist(task.mnist_images, task.mnist_labels, task.mnist_limit);
  if (all.size() <= task.mnist_train) {
    throw ConfigError("task.mnist_train", "the IDX files hold only " + std::to_string(all.size()) + " examples");
  }
  DatasetSplits s;
  s.train = all.slice(0, task.mnist_train);
  s.test = all.slice(task.mnist_train, all.size());
  // the held-out digits double as the validation split
  s.validation = s.test;
  return s;
}

const Dataset& split_named(const DatasetSplits& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "validation") return splits.validation;
  if (name == "test") return splits.test;
  throw ParameterError("unknown split '" + name + "'");
}

Checkpoint initial_checkpoint(const ExperimentConfig& cfg, const DatasetSplits& data) {
  if (data.train.size() == 0) throw ParameterError("initial_checkpoint: empty training split");
  RngStream rng(cfg.seed);
  int max_label = 0;
  for (int y : data.train.labels) max_label = std::max(max_label, y);
  const auto classes = static_cast<std::size_t>(max_label) + 1;
  const auto& a = cfg.architecture;
  if (a.kind == "GRU") {
    GruStackConfig g;
    g.input_dim = data.train.inputs[0].dim(1);
    g.input_units = a.input_units;
    g.hidden = a.hidden;
    g.num_layers = a.layers;
    g.num_classes = std::max(classes, cfg.task.kind == "SYNTH-SEQ" ? cfg.task.synth.num_classes : classes);
    g.input_bias = a.input_bias;
    return Checkpoint(make_gru_stack(g, rng));
  }
  ConvNetConfig c;
  c.in_c = 1;
  c.in_h = c.in_w = 28;
  c.conv_channels = a.conv_channels;
  c.kernel = a.kernel;
  c.fc_hidden = a.fc_hidden;
  c.num_classes = std::max<std::size_t>(classes, 10);
  return Checkpoint(make_conv_net(c, rng));
}

TrainConfig train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = cfg.training.batch_size;
  tc.seed = cfg.seed;
  tc.explode_threshold = cfg.training.explode_threshold;
  return tc;
}

Checkpoint pretrain(const ExperimentConfig& cfg, const DatasetSplits& data) {
  return pretrain_fp(initial_checkpoint(cfg, data), data.train, cfg.training.fp_epochs, train_config(cfg),
                     cfg.training.optimizer, cfg.training.grad_clip);
}

double resolved_sigma_L(const ExperimentConfig& cfg, const Checkpoint& fp) {
  return cfg.training.schedule.sigma_L > 0.0 ? cfg.training.schedule.sigma_L : derive_sigma_L(fp);
}

std::vector<TrainStage> finetune_stages(const ExperimentConfig& cfg, const Checkpoint& fp) {
  const auto& t = cfg.training;
  const QuantSpec quant = t.weight_levels ? QuantSpec::multilevel(t.weight_levels, 0.0) : QuantSpec::fp();
  if (t.method == "FP") return {};
  if (t.method == "STE") {
    return {ste_stage("ste", t.ste_slope_start, t.ste_slope_end, t.ste_fp_weights ? QuantSpec::fp() : quant,
                      t.ste_epochs, t.finetune_optimizer, t.grad_clip)};
  }
  SigmaSchedule s = t.schedule;
  if (s.mode == SigmaMode::TwoStage || s.mode == SigmaMode::DirectLarge) {
    s.sigma_L = resolved_sigma_L(cfg, fp);
    // a derived sigma_L below sigma_S would make the schedule run uphill
    if (s.mode == SigmaMode::TwoStage && s.sigma_L < s.sigma_S) {
      throw ConfigError("training.sigma_schedule", "derived sigma_L " + format_double(s.sigma_L) +
                                                        " is below sigma_S " + format_double(s.sigma_S));
    }
  } else {
    s.sigma_L = std::max(s.sigma_L, s.sigma_S);
  }
  auto stages = nna_stages(s, t.tau, quant, t.large_epochs, t.small_epochs, t.finetune_optimizer, t.grad_clip);
  for (auto& st : stages)
    if (st.name == "nna-small") st.optimizer.learning_rate *= t.small_lr_scale;
  return stages;
}

PipelineResult finetune(const ExperimentConfig& cfg, const Checkpoint& fp, const DatasetSplits& data) {
  return run_pipeline(fp, finetune_stages(cfg, fp), data.train, train_config(cfg));
}

PimNoiseConfig pim_noise(const PimConfig& pim) {
  return PimNoiseConfig{EnvmProfile::preset(pim.profile), pim.offset_std, pim.white_std, pim.polarity};
}

const std::vector<std::string> kSweepColumns{"sigma_eval", "mean_acc", "std_acc", "min_acc", "max_acc", "n_repeats"};
const std::vector<std::string> kPenaltyColumns{"network", "sigma", "examples", "pg", "pc", "total", "normalized_total"};
const std::vector<std::string> kPenaltyCellColumns{"network", "layer", "timestep", "pg", "pc"};
const std::vector<std::string> kChipColumns{"chip_seed", "profile", "polarity", "offset_std", "white_std", "accuracy"};
const std::vector<std::string> kTrainingLogColumns{"stage", "epoch", "mean_loss", "stage_max_grad_norm"};
const std::vector<std::string> kCellPairColumns{"array", "row", "col", "level_plus", "level_minus"};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = csv_line(kSweepColumns);
  for (const auto& r : rows) {
    s += csv_line({format_double(r.sigma_eval), format_double(r.mean_acc), format_double(r.std_acc),
                   format_double(r.min_acc), format_double(r.max_acc), std::to_string(r.n_repeats)});
  }
  return s;
}

std::string penalty_csv(const std::vector<NamedPenalty>& rows) {
  std::string s = csv_line(kPenaltyColumns);
  for (const auto& [name, r] : rows) {
    s += csv_line({name, format_double(r.sigma), std::to_string(r.examples), format_double(r.pg), format_double(r.pc),
                   format_double(r.total), format_double(r.normalized_total)});
  }
  return s;
}

std::string penalty_cells_csv(const std::vector<NamedPenalty>& rows) {
  std::string s = csv_line(kPenaltyCellColumns);
  for (const auto& [name, r] : rows)
    for (const auto& c : r.cells) {
      s += csv_line({name, std::to_string(c.layer), std::to_string(c.timestep), format_double(c.pg),
                     format_double(c.pc)});
    }
  return s;
}

std::string chip_csv(const ChipStudy& study, const PimConfig& pim) {
  std::string s = csv_line(kChipColumns);
  for (std::size_t i = 0; i < study.accuracies.size(); ++i) {
    s += csv_line({std::to_string(study.chip_seeds[i]), pim.profile, to_string(pim.polarity),
                   format_double(pim.offset_std), format_double(pim.white_std), format_double(study.accuracies[i])});
  }
  return s;
}

std::string training_log_csv(const std::vector<StageMetrics>& stages) {
  std::string s = csv_line(kTrainingLogColumns);
  for (const auto& st : stages)
    for (std::size_t e = 0; e < st.epoch_loss.size(); ++e) {
      s += csv_line({st.name, std::to_string(e + 1), format_double(st.epoch_loss[e]), format_double(st.max_grad_norm)});
    }
  return s;
}

Checkpoint strip_shadow_weights(const Checkpoint& ckpt) {
  Checkpoint out = ckpt;
  for (auto& p : parameters(out.net)) p.weight->shadow = p.weight->forward_weights();
  return out;
}

std::string cell_pair_csv(const Checkpoint& ckpt) {
  std::string s = csv_line(kCellPairColumns);
  for (const auto& p : parameters(ckpt.net)) {
    if (!p.in_array) continue;
    if (!p.weight->spec.on_grid_quantized()) {
      throw EncodingError("array weight '" + p.name + "' is full precision and has no cell encoding");
    }
    const Tensor q = p.weight->forward_weights();
    const CellPairArray cells = encode_cell_pair(q, p.weight->spec);
    const std::size_t rows = q.dim(0), cols = q.size() / rows;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        s += csv_line({p.name, std::to_string(r), std::to_string(c),
                       std::to_string(cells.level_index(cells.i_plus[i])),
                       std::to_string(cells.level_index(cells.i_minus[i]))});
      }
  }
  return s;
}

}  // namespace nna
