#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rvt/classifier.hpp"
#include "rvt/data.hpp"
#include "rvt/encoder.hpp"
#include "rvt/tensor.hpp"

namespace rvt {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind optimizer_kind_from_name(const std::string& name);
std::string optimizer_kind_name(OptimizerKind kind);

struct TrainConfig {
  double lr = 5e-6;  // synthetic runs use 1e-3 with adam
  std::size_t epochs = 40;
  std::size_t clip_batch = 1;  // the only supported value
  std::uint64_t seed = 1;
  ClassMode mode = ClassMode::Binary;
  CellKind cell = CellKind::Rnn;
  LossKind loss = LossKind::Absolute;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::size_t hidden = 32;
  bool freeze_encoder = false;
  bool ablate_recurrence = false;  // zero the hidden-to-hidden weights and keep them out of training

  void validate() const;
};

// Encoder plus session head under one roof.
struct Model {
  EncoderConfig enc_cfg;
  HeadConfig head_cfg;
  EncoderParams enc;
  HeadParams head;

  static Model init(const EncoderConfig& enc_cfg, const HeadConfig& head_cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const;
};

// Checkpoint round-trip for a whole model.
void save_model(const std::string& path, const Model& model);
void load_model(const std::string& path, Model& model);

// Resizes every clip to the encoder input (box filter) and rescales landmark
// coordinates to match. Sessions already at the target size are shared.
Dataset prepare_dataset(const Dataset& ds, const EncoderConfig& enc_cfg);

// Forward pass of one session: per-clip compose -> encode -> recurrent head.
// When `input_leaves` is given, each clip's composed input is created with
// requires_grad so pixel gradients can be read back, and stored there.
SessionTrace forward_session(const Session& session, const Model& model,
                             std::vector<Tensor>* input_leaves = nullptr);

// Trains in place. Sessions are visited in increasing (participant, session)
// order, one optimizer step per session; returns the per-epoch mean loss.
std::vector<double> train_one(const Dataset& train, Model& model, const TrainConfig& cfg);

struct PredictionRow {
  std::string participant;
  int session_index = 0;
  int clip_index = 0;
  int true_class = 0;
  int decision = 0;
  double gifs = 0.0;
};

struct TraceRow {
  std::string participant;
  int session_index = 0;
  int clip_index = 0;
  double gifs = 0.0;
  int decision = 0;
  double hidden_norm = 0.0;
};

struct EvalResult {
  std::vector<PredictionRow> predictions;  // labeled clips only
  std::vector<TraceRow> traces;            // every clip
};

EvalResult evaluate(const Dataset& test, const Model& model);

struct FoldMetrics {
  double balanced_accuracy = 0.0;  // over the classes present in this fold
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  std::optional<double> auc;  // absent when the fold's truth is single-class
};

FoldMetrics fold_metrics(const std::vector<PredictionRow>& predictions, ClassMode mode);

struct FoldResult {
  std::string participant;
  std::vector<double> train_loss;  // per-epoch mean
  std::vector<PredictionRow> predictions;
  std::vector<TraceRow> traces;
  FoldMetrics metrics;
  Model model;
};

struct MetricSummary {
  std::vector<double> per_fold;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct AggregateReport {
  std::size_t n_folds = 0;
  MetricSummary balanced_accuracy;
  MetricSummary accuracy;
  MetricSummary f1;
  MetricSummary precision;
  MetricSummary auc;  // over the folds where it is defined
  std::size_t auc_defined_folds = 0;
  // All test predictions pooled into one confusion matrix / score list.
  double pooled_balanced_accuracy = 0.0;
  double pooled_accuracy = 0.0;
  double pooled_f1 = 0.0;
  double pooled_precision = 0.0;
  double pooled_auc = 0.0;
};

AggregateReport aggregate_folds(const std::vector<FoldResult>& folds, ClassMode mode);

// Leave-one-participant-out over the prepared dataset. Fold f trains with
// seed cfg.seed ^ f; `jobs` folds run concurrently; results and the
// aggregate are byte-identical for any job count.
std::vector<FoldResult> run_loocv(const Dataset& ds, const EncoderConfig& enc_cfg,
                                  const TrainConfig& cfg, std::size_t jobs = 1);

}  // namespace rvt
