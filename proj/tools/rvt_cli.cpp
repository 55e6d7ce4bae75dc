// Command-line front end: synth | train | loocv | eval | gee | saliency | audit.
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "rvt/config.hpp"
#include "rvt/pipeline.hpp"

namespace {

struct CliOverrides {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string mode;
  std::string cell;
  std::string loss;
  std::string optimizer;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  int epochs = 0;
  double lr = 0.0;
  bool lr_set = false;
  bool freeze_encoder = false;
  bool ablate_recurrence = false;
};

// Options shared by the commands that build or consume a full run config.
void add_common(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config_path, "config file (key = value, [section] headers)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed")->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--data", o.data_dir, "dataset directory");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--mode", o.mode, "label mode: binary or three_class")
      ->check(CLI::IsMember({"binary", "three_class"}));
  cmd->add_option("--jobs", o.jobs, "concurrent folds")->check(CLI::PositiveNumber);
}

void add_train_flags(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr, "learning rate")->each([&o](const std::string&) { o.lr_set = true; });
  cmd->add_option("--cell", o.cell, "recurrent cell: rnn or gru")
      ->check(CLI::IsMember({"rnn", "gru"}));
  cmd->add_option("--loss", o.loss, "loss: absolute or cross_entropy")
      ->check(CLI::IsMember({"absolute", "cross_entropy"}));
  cmd->add_option("--optimizer", o.optimizer, "optimizer: sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}));
  cmd->add_flag("--freeze-encoder", o.freeze_encoder, "train only the recurrent head");
  cmd->add_flag("--ablate-recurrence", o.ablate_recurrence,
                "zero and freeze the hidden-to-hidden weights");
}

rvt::RunConfig build_config(const CliOverrides& o) {
  rvt::RunConfig cfg;
  if (!o.config_path.empty()) cfg = rvt::parse_config_file(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.mode.empty()) cfg.mode = rvt::class_mode_from_name(o.mode);
  if (o.jobs > 0) cfg.jobs = static_cast<std::size_t>(o.jobs);
  if (o.epochs > 0) cfg.train.epochs = static_cast<std::size_t>(o.epochs);
  if (o.lr_set) cfg.train.lr = o.lr;
  if (!o.cell.empty()) cfg.train.cell = rvt::cell_kind_from_name(o.cell);
  if (!o.loss.empty()) cfg.train.loss = rvt::loss_kind_from_name(o.loss);
  if (!o.optimizer.empty()) cfg.train.optimizer = rvt::optimizer_kind_from_name(o.optimizer);
  if (o.freeze_encoder) cfg.train.freeze_encoder = true;
  if (o.ablate_recurrence) cfg.train.ablate_recurrence = true;
  cfg.finalize();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent video transformer pipeline for session-level fatigue estimation"};
  app.require_subcommand(1);

  CliOverrides o;
  std::string run_dir;
  std::string compare_run;
  rvt::GeeOptions gee_opts;
  rvt::SaliencyRunOptions sal_opts;
  int radius = 3;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, o);

  CLI::App* train = app.add_subcommand("train", "train one model on a whole dataset");
  add_common(train, o);
  add_train_flags(train, o);

  CLI::App* loocv =
      app.add_subcommand("loocv", "leave-one-participant-out cross-validation");
  add_common(loocv, o);
  add_train_flags(loocv, o);

  CLI::App* eval = app.add_subcommand("eval", "recompute metrics from a finished run");
  eval->add_option("--run", run_dir, "run directory (from loocv)")->required();
  eval->add_option("--compare", compare_run, "second run; paired Wilcoxon on fold balanced accuracy");

  CLI::App* gee = app.add_subcommand("gee", "reaction-time regression against the run's scores");
  gee->add_option("--run", run_dir, "run directory (from loocv)")->required();
  gee->add_option("--data", o.data_dir, "dataset directory (defaults to the run's)");
  gee->add_flag("--endpoint-mean", gee_opts.endpoint_mean,
                "aggregate scores as the mean of the first and last clip");
  gee->add_flag("--standardize", gee_opts.standardize, "z-score the covariates first");

  CLI::App* saliency = app.add_subcommand("saliency", "input-gradient maps for every test session");
  saliency->add_option("--run", run_dir, "run directory (from loocv)")->required();
  saliency->add_option("--data", o.data_dir, "dataset directory (defaults to the run's)");
  saliency->add_option("--radius", radius, "landmark aggregation radius in pixels")
      ->check(CLI::PositiveNumber);
  saliency->add_flag("--grad-times-input", sal_opts.grad_times_input,
                     "weight gradients by the input values");

  CLI::App* audit = app.add_subcommand("audit", "check fold isolation and dataset integrity");
  audit->add_option("--run", run_dir, "run directory (from loocv)")->required();
  audit->add_option("--data", o.data_dir, "dataset directory (defaults to the run's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      rvt::cmd_synth(build_config(o));
    } else if (train->parsed()) {
      rvt::cmd_train(build_config(o));
    } else if (loocv->parsed()) {
      rvt::cmd_loocv(build_config(o));
    } else if (eval->parsed()) {
      rvt::cmd_eval(run_dir, compare_run);
    } else if (gee->parsed()) {
      rvt::cmd_gee(run_dir, o.data_dir, gee_opts);
    } else if (saliency->parsed()) {
      sal_opts.radius_px = static_cast<std::size_t>(radius);
      rvt::cmd_saliency(run_dir, o.data_dir, sal_opts);
    } else if (audit->parsed()) {
      return rvt::cmd_audit(run_dir, o.data_dir) == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
