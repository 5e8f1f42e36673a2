#include "fmri_s4_cli/app.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "fmri_s4/checkpoint.hpp"
#include "fmri_s4/data_io.hpp"
#include "fmri_s4/errors.hpp"
#include "fmri_s4/protocol.hpp"
#include "fmri_s4/s4_kernel.hpp"
#include "fmri_s4/seed.hpp"
#include "fmri_s4/training.hpp"
#include "fmri_s4_cli/run_config.hpp"

namespace fmri_s4::cli {
namespace {

namespace fs = std::filesystem;

std::string flag_name(const std::string& key) {
  std::string flag = "--" + key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  return flag;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

/// Run-config flags for one subcommand; applied over the config file after parsing.
class ConfigFlags {
 public:
  ConfigFlags(CLI::App& cmd, const std::vector<std::string>& keys) {
    cmd.add_option("--config", config_path_, "Flat key = value file; flags override it");
    for (const auto& key : keys) {
      options_.emplace_back(key, cmd.add_option(flag_name(key), values_[key], "Overrides config key " + key));
    }
  }

  RunConfig resolve() {
    RunConfig cfg;
    if (!config_path_.empty()) cfg.merge_file(config_path_);
    for (const auto& [key, option] : options_) {
      if (option->count() > 0) cfg.set(key, values_[key]);
    }
    return cfg;
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

const std::vector<std::string> kTrainKeys = {"manifest",     "out",        "d_model",   "k",         "k_conv",
                                             "k_s4",         "d_state",    "dropout",   "delta_min", "delta_max",
                                             "lr",           "weight_decay", "max_epochs", "patience", "batch_size",
                                             "seed",         "precision",  "val_fraction"};

std::vector<std::string> xval_keys() {
  auto keys = kTrainKeys;
  keys.erase(std::remove(keys.begin(), keys.end(), "val_fraction"), keys.end());
  keys.insert(keys.end(), {"folds", "repeats", "jobs"});
  return keys;
}

void require(const RunConfig& cfg, const std::string& key) {
  if (cfg.get(key).empty()) throw UsageError(flag_name(key) + " is required");
}

data::Dataset load_dataset(const std::string& manifest) {
  if (!fs::exists(manifest)) throw UsageError("manifest not found: " + manifest);
  return data::load_manifest(manifest);
}

void validate(const RunConfig& cfg) {
  try {
    nn::ModelConfig m = cfg.model;
    m.n_rois = 1;
    m.validate();
    cfg.train.validate();
  } catch (const InvalidConfig& e) {
    throw UsageError(e.what());
  }
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw UsageError("val_fraction must lie in (0, 1)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void print_metrics(std::ostream& out, const train::Metrics& m) {
  out << "accuracy    " << fmt("%.4f", m.accuracy) << '\n'
      << "sensitivity " << fmt("%.4f", m.sensitivity) << '\n'
      << "specificity " << fmt("%.4f", m.specificity) << '\n'
      << "tp " << m.tp << "  fp " << m.fp << "  tn " << m.tn << "  fn " << m.fn << '\n';
}

template <typename Real>
void train_and_save(const RunConfig& cfg, const data::Dataset& train_set, const data::Dataset& val_set,
                    const fs::path& dir, std::ostream& out) {
  auto result = train::train<Real>(cfg.model, train_set, val_set, cfg.train, [&](const train::EpochRecord& e) {
    out << "epoch " << e.epoch << "  loss " << fmt("%.4f", e.train_loss) << "  train_acc "
        << fmt("%.3f", e.train_accuracy) << "  val_acc " << fmt("%.3f", e.val_accuracy) << '\n';
  });
  nn::save_checkpoint(dir / "model.fs4c", result.model, train_set.class_names);
  std::ofstream history(dir / "history.csv", std::ios::binary | std::ios::trunc);
  result.history.write_csv(history);
  out << "stopped: " << result.history.stop_reason << ", best epoch " << result.history.best_epoch
      << ", val_acc " << fmt("%.4f", result.history.best_val_accuracy) << '\n';
  out << "train-split metrics (best epoch):\n";
  print_metrics(out, train::evaluate(result.model, train_set, cfg.train.batch_size));
}

int cmd_train(ConfigFlags& flags, std::ostream& out) {
  RunConfig cfg = flags.resolve();
  require(cfg, "manifest");
  require(cfg, "out");
  validate(cfg);
  const auto dataset = load_dataset(cfg.manifest);
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto [kept, held] =
      data::stratified_holdout(all, dataset.labels(), cfg.val_fraction, derive_seed(cfg.train.seed, 50));
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());
  out << "train: " << kept.size() << " samples, validation: " << held.size() << ", rois: " << dataset.n_rois << '\n';
  const auto train_set = dataset.subset(kept), val_set = dataset.subset(held);
  if (cfg.train.precision == train::Precision::double_precision) {
    train_and_save<double>(cfg, train_set, val_set, dir, out);
  } else {
    train_and_save<float>(cfg, train_set, val_set, dir, out);
  }
  return 0;
}

int cmd_xval(ConfigFlags& flags, std::ostream& out) {
  RunConfig cfg = flags.resolve();
  require(cfg, "manifest");
  require(cfg, "out");
  validate(cfg);
  if (cfg.jobs == 0) throw UsageError("--jobs must be at least 1");
  const auto dataset = load_dataset(cfg.manifest);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());

  train::CrossValidationOptions options;
  options.folds = cfg.folds;
  options.repeats = cfg.repeats;
  options.inner_fraction = cfg.val_fraction;
  options.jobs = cfg.jobs;
  const auto result = train::cross_validate(dataset, options, cfg.model, cfg.train, [&](const train::FoldResult& f) {
    out << "repeat " << f.repeat << " fold " << f.fold << "  acc " << fmt("%.4f", f.metrics.accuracy) << "  sens "
        << fmt("%.4f", f.metrics.sensitivity) << "  spec " << fmt("%.4f", f.metrics.specificity) << "  (best epoch "
        << f.best_epoch << ")\n";
  });
  std::ofstream folds(dir / "folds.csv", std::ios::binary | std::ios::trunc);
  result.write_folds_csv(folds);
  std::ofstream summary(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  result.summary.write_csv(summary);
  out << "Acc. " << result.summary.accuracy.formatted() << "  Sens. " << result.summary.sensitivity.formatted()
      << "  Spec. " << result.summary.specificity.formatted() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, std::size_t batch_size,
             std::ostream& out) {
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  auto dataset = load_dataset(manifest);
  const auto loaded = nn::load_checkpoint<float>(checkpoint);
  // Relabel by class name so manifests with a subset of classes still line up.
  std::vector<std::size_t> remap;
  for (const auto& name : dataset.class_names) {
    const auto it = std::find(loaded.class_names.begin(), loaded.class_names.end(), name);
    if (it == loaded.class_names.end()) throw Error("class '" + name + "' is unknown to the checkpoint");
    remap.push_back(static_cast<std::size_t>(it - loaded.class_names.begin()));
  }
  for (auto& s : dataset.samples) s.label = remap[s.label];
  dataset.class_names = loaded.class_names;
  out << "samples " << dataset.size() << '\n';
  print_metrics(out, train::evaluate(loaded.model, dataset, batch_size));
  return 0;
}

struct KernelArgs {
  std::size_t d_state = 64;
  std::size_t length = 256;
  double delta = 0.01;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
  std::string out;
  bool verify = false;
};

int cmd_kernel(const KernelArgs& a, std::ostream& out) {
  if (a.d_state == 0 || a.length == 0 || a.channels == 0) throw UsageError("--d-state, --length and --channels must be positive");
  if (!(a.delta > 0.0) || !std::isfinite(a.delta)) throw UsageError("--delta must be positive");
  auto layer = s4::init_s4_params<double>(a.channels, 2 * a.d_state, 1e-3, 1e-1, a.seed);
  std::vector<std::vector<double>> kernels;
  double deviation = 0.0;
  for (auto& ch : layer.channels) {
    ch.log_delta = std::log(a.delta);
    kernels.push_back(s4::dplr_kernel_fast(ch, a.length).values);
    if (a.verify) {
      const auto naive = s4::dplr_kernel_naive(ch, a.length);
      for (std::size_t i = 0; i < a.length; ++i) deviation = std::max(deviation, std::abs(naive.values[i] - kernels.back()[i]));
    }
  }
  out << "hippo kernel: d_state " << a.d_state << " (state dim " << 2 * a.d_state << "), length " << a.length
      << ", delta " << a.delta << ", channels " << a.channels << '\n';
  if (!a.out.empty()) {
    std::string csv = "t";
    for (std::size_t c = 0; c < a.channels; ++c) csv += ",channel_" + std::to_string(c);
    csv += '\n';
    for (std::size_t t = 0; t < a.length; ++t) {
      csv += std::to_string(t);
      for (const auto& k : kernels) csv += "," + data::format_value(k[t]);
      csv += '\n';
    }
    const fs::path path = a.out;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, csv);
    out << "wrote " << a.out << '\n';
  }
  if (a.verify) out << "max |fast - naive| = " << fmt("%.3e", deviation) << '\n';
  return 0;
}

struct SynthArgs {
  std::string task;
  std::size_t n = 1000;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t n_rois = 16;
  std::size_t length = 0;  // task default
  std::size_t span = 300;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.n == 0) throw UsageError("--n must be positive");
  data::Dataset ds;
  try {
    if (a.task == "longrange") {
      ds = data::gen_synthetic_longrange(a.n, a.n_rois, a.length ? a.length : 400, a.span, a.seed);
    } else {
      ds = data::gen_synthetic_ssm(a.n, a.n_rois, a.length ? a.length : 100, a.seed);
    }
  } catch (const InvalidSpan& e) {
    throw UsageError(e.what());
  }
  data::write_dataset(ds, a.out);
  out << "wrote " << ds.size() << " samples (" << ds.n_rois << " rois, " << ds.samples[0].length()
      << " timepoints) to " << a.out << '\n';
  for (std::size_t c = 0; c < ds.n_classes(); ++c) out << "  " << ds.class_names[c] << ": " << ds.count_label(c) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fMRI-S4: convolutional + S4 state-space classifier for ROI time series", "fmri_s4"};
  app.require_subcommand(1, 1);

  auto* train_cmd = app.add_subcommand("train", "Train one model with a stratified validation split");
  ConfigFlags train_flags(*train_cmd, kTrainKeys);

  auto* xval_cmd = app.add_subcommand("xval", "Repeated stratified k-fold cross-validation");
  ConfigFlags xval_flags(*xval_cmd, xval_keys());

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  std::string checkpoint, eval_manifest;
  std::size_t eval_batch = 32;
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest CSV (id,path,label)")->required();
  eval_cmd->add_option("--batch-size", eval_batch, "Evaluation batch size")->check(CLI::PositiveNumber);

  auto* kernel_cmd = app.add_subcommand("kernel", "Dump HiPPO-initialized S4 kernels");
  KernelArgs kernel;
  kernel_cmd->add_option("--d-state", kernel.d_state, "Complex modes per channel (state dim is twice this)");
  kernel_cmd->add_option("--length", kernel.length, "Kernel length");
  kernel_cmd->add_option("--delta", kernel.delta, "Discretization step");
  kernel_cmd->add_option("--channels", kernel.channels, "Independent channels");
  kernel_cmd->add_option("--seed", kernel.seed, "Seed for C and D");
  kernel_cmd->add_option("--out", kernel.out, "CSV destination");
  kernel_cmd->add_flag("--verify", kernel.verify, "Report the max deviation from the materialized oracle");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset");
  SynthArgs synth;
  synth_cmd->add_option("--task", synth.task, "longrange or ssm")
      ->required()
      ->check(CLI::IsMember({"longrange", "ssm"}));
  synth_cmd->add_option("--n", synth.n, "Number of samples");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--n-rois", synth.n_rois, "Channels per sample");
  synth_cmd->add_option("--length", synth.length, "Timepoints (default 400 longrange, 100 ssm)");
  synth_cmd->add_option("--span", synth.span, "Token distance for longrange");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags, out);
    if (xval_cmd->parsed()) return cmd_xval(xval_flags, out);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, eval_manifest, eval_batch, out);
    if (kernel_cmd->parsed()) return cmd_kernel(kernel, out);
    return cmd_synth(synth, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fmri_s4::cli
