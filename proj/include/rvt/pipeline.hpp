#pragma once

#include <cstddef>
#include <string>

#include "rvt/config.hpp"

namespace rvt {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level from RVT_LOG_LEVEL in {error,warn,info,debug}; defaults to info.
LogLevel log_level();
void log(LogLevel level, const std::string& msg);

// Writes a synthetic dataset (manifest + PGM frames) under cfg.out_dir,
// streaming one session at a time.
void cmd_synth(const RunConfig& cfg);

// Trains one model on the full dataset; persists config.snapshot,
// checkpoint.rvt and train_loss.csv under cfg.out_dir.
void cmd_train(const RunConfig& cfg);

// Participant-level LOOCV; persists config.snapshot, per-fold artifacts
// under folds/<participant>/ and the aggregate report.
void cmd_loocv(const RunConfig& cfg);

// Recomputes metrics from the persisted per-fold predictions; writes
// eval.json and prints a table. With `compare_run`, pairs fold balanced
// accuracies against the other run's and reports a Wilcoxon test.
void cmd_eval(const std::string& run_dir, const std::string& compare_run = "");

// Fits the three reaction-time models from the dataset manifest plus the
// run's trace CSVs; writes gee.json and prints coefficient tables.
// `data_dir` may be empty to use the path recorded in the run config.
void cmd_gee(const std::string& run_dir, std::string data_dir, const GeeOptions& opts);

// Per-clip saliency over every fold's test sessions using that fold's
// checkpoint; writes heatmaps, overlays, landmark_report.csv, saliency.json.
void cmd_saliency(const std::string& run_dir, std::string data_dir, const SaliencyRunOptions& opts);

// Verifies zero participant leakage in the persisted folds and, when a
// dataset is reachable, its manifest integrity. Writes audit.json; returns
// the number of problems found (0 = clean).
std::size_t cmd_audit(const std::string& run_dir, std::string data_dir);

}  // namespace rvt
