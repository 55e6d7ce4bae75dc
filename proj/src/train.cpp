#include "rvt/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "rvt/checkpoint.hpp"
#include "rvt/image.hpp"
#include "rvt/metrics.hpp"
#include "rvt/ops.hpp"
#include "rvt/optim.hpp"

namespace rvt {

OptimizerKind optimizer_kind_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::runtime_error("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::runtime_error("train config: lr must be positive");
  if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
  if (clip_batch != 1) {
    throw std::runtime_error("train config: clip_batch must be 1, got " + std::to_string(clip_batch));
  }
  if (hidden == 0) throw std::runtime_error("train config: hidden must be positive");
}

Model Model::init(const EncoderConfig& enc_cfg, const HeadConfig& head_cfg, std::uint64_t seed) {
  if (head_cfg.feature_dim != enc_cfg.feature_dim) {
    throw std::runtime_error("model: head feature_dim " + std::to_string(head_cfg.feature_dim) +
                             " does not match encoder feature_dim " +
                             std::to_string(enc_cfg.feature_dim));
  }
  Model m;
  m.enc_cfg = enc_cfg;
  m.head_cfg = head_cfg;
  m.enc = EncoderParams::init(enc_cfg, seed);
  m.head = HeadParams::init(head_cfg, seed);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named() const {
  auto out = enc.named();
  auto h = head.named();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named()) out.push_back(t);
  return out;
}

void save_model(const std::string& path, const Model& model) {
  save_checkpoint(path, model.named());
}

void load_model(const std::string& path, Model& model) {
  load_checkpoint_into(path, model.named());
}

Dataset prepare_dataset(const Dataset& ds, const EncoderConfig& enc_cfg) {
  enc_cfg.validate();
  const std::size_t th = enc_cfg.input_height;
  const std::size_t tw = enc_cfg.input_width - 1;  // mask column is appended later
  Dataset out;
  out.mode = ds.mode;
  out.sessions.reserve(ds.sessions.size());
  for (const auto& s : ds.sessions) {
    if (s->clips.empty()) throw std::runtime_error("prepare_dataset: empty session");
    const Shape& fs = s->clips.front().frames.shape();
    if (fs[2] == th && fs[3] == tw) {
      out.sessions.push_back(s);
      continue;
    }
    auto scaled = std::make_shared<Session>(*s);
    for (Clip& c : scaled->clips) c.frames = resize_area(c.frames, th, tw);
    const double sh = static_cast<double>(fs[2]), sw = static_cast<double>(fs[3]);
    for (Landmark& lm : scaled->landmarks) {
      lm.x = sw > 1.0 ? lm.x * static_cast<double>(tw - 1) / (sw - 1.0) : 0.0;
      lm.y = sh > 1.0 ? lm.y * static_cast<double>(th - 1) / (sh - 1.0) : 0.0;
    }
    out.sessions.push_back(std::move(scaled));
  }
  validate_dataset(out);
  return out;
}

SessionTrace forward_session(const Session& session, const Model& model,
                             std::vector<Tensor>* input_leaves) {
  std::vector<Tensor> features;
  features.reserve(session.clips.size());
  for (std::size_t j = 0; j < session.clips.size(); ++j) {
    Tensor composed = compose_input(session.clips[j].frames, session.mask_flags[j],
                                    input_leaves != nullptr);
    if (input_leaves) input_leaves->push_back(composed);
    features.push_back(encode_clip(composed, model.enc, model.enc_cfg));
  }
  return run_session(features, model.head, model.head_cfg);
}

namespace {

std::vector<std::shared_ptr<const Session>> sessions_in_order(const Dataset& ds) {
  auto sorted = ds.sessions;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a->participant_id, a->session_index) < std::tie(b->participant_id, b->session_index);
  });
  return sorted;
}

std::vector<Tensor> trainable_parameters(const Model& model, const TrainConfig& cfg) {
  std::vector<Tensor> out;
  if (!cfg.freeze_encoder) {
    for (Tensor t : model.enc.parameters()) out.push_back(t);
  }
  std::vector<Tensor> skip;
  if (cfg.ablate_recurrence) skip = model.head.recurrent_parameters();
  for (Tensor t : model.head.parameters()) {
    bool skipped = false;
    for (const Tensor& s : skip) {
      if (t.node() == s.node()) skipped = true;
    }
    if (!skipped) out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<double> train_one(const Dataset& train, Model& model, const TrainConfig& cfg) {
  cfg.validate();
  if (train.sessions.empty()) throw std::runtime_error("train_one: empty training set");
  if (train.mode != cfg.mode || model.head_cfg.mode != cfg.mode) {
    throw std::runtime_error("train_one: class mode mismatch between dataset, model and config");
  }

  if (cfg.freeze_encoder) model.enc.set_requires_grad(false);
  if (cfg.ablate_recurrence) {
    for (Tensor t : model.head.recurrent_parameters()) {
      auto v = t.mutable_values();
      std::fill(v.begin(), v.end(), 0.0);
      t.set_requires_grad(false);
    }
  }
  const std::vector<Tensor> params = trainable_parameters(model, cfg);

  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const auto order = sessions_in_order(train);

  std::vector<double> epoch_losses;
  epoch_losses.reserve(cfg.epochs);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (const auto& s : order) {
      try {
        SessionTrace trace = forward_session(*s, model);
        Tensor loss = session_loss(trace, s->pre, s->post, model.head_cfg, cfg.loss);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw std::runtime_error("loss is not finite");
        sum += lv;
        loss.backward();
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", participant " + s->participant_id + ", session " +
                                 std::to_string(s->session_index) + ": " + e.what());
      }
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam.step(params);
      } else {
        sgd_step(params, cfg.lr);
      }
    }
    epoch_losses.push_back(sum / static_cast<double>(order.size()));
  }
  return epoch_losses;
}

EvalResult evaluate(const Dataset& test, const Model& model) {
  EvalResult out;
  for (const auto& s : sessions_in_order(test)) {
    const SessionTrace trace = forward_session(*s, model);
    for (std::size_t j = 0; j < s->clips.size(); ++j) {
      const Clip& clip = s->clips[j];
      const double g = trace.gifs[j].item();
      out.traces.push_back(TraceRow{s->participant_id, s->session_index, clip.index, g,
                                    trace.decisions[j], trace.hidden_norms[j]});
      if (clip.labeled) {
        const int truth = test.mode == ClassMode::Binary ? binarize(clip.label)
                                                         : three_class(clip.label);
        out.predictions.push_back(PredictionRow{s->participant_id, s->session_index, clip.index,
                                                truth, trace.decisions[j], g});
      }
    }
  }
  return out;
}

FoldMetrics fold_metrics(const std::vector<PredictionRow>& predictions, ClassMode mode) {
  if (predictions.empty()) throw std::runtime_error("fold_metrics: no predictions");
  const std::size_t n = class_count(mode);
  ConfusionMatrix cm(n);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(predictions.size());
  for (const PredictionRow& p : predictions) {
    cm.add(p.true_class, p.decision);
    scored.emplace_back(p.gifs, p.true_class);
  }
  FoldMetrics m;
  m.balanced_accuracy = balanced_accuracy_supported(cm);
  m.accuracy = accuracy(cm);
  const PrecisionF1 pf = f1_precision(cm);
  m.precision = pf.precision;
  m.f1 = pf.f1;
  try {
    m.auc = mode == ClassMode::Binary ? auc_binary(scored) : auc_macro_ovr(scored, n, false);
  } catch (const std::exception&) {
    m.auc = std::nullopt;  // single-class fold
  }
  return m;
}

namespace {

MetricSummary summarize(std::vector<double> per_fold) {
  MetricSummary s;
  s.per_fold = std::move(per_fold);
  const std::size_t n = s.per_fold.size();
  if (n == 0) return s;
  for (double v : s.per_fold) s.mean += v;
  s.mean /= static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : s.per_fold) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

}  // namespace

AggregateReport aggregate_folds(const std::vector<FoldResult>& folds, ClassMode mode) {
  if (folds.empty()) throw std::runtime_error("aggregate_folds: no folds");
  AggregateReport rep;
  rep.n_folds = folds.size();
  std::vector<double> bacc, acc, f1, prec, auc;
  std::vector<PredictionRow> pooled;
  for (const FoldResult& f : folds) {
    bacc.push_back(f.metrics.balanced_accuracy);
    acc.push_back(f.metrics.accuracy);
    f1.push_back(f.metrics.f1);
    prec.push_back(f.metrics.precision);
    if (f.metrics.auc) auc.push_back(*f.metrics.auc);
    pooled.insert(pooled.end(), f.predictions.begin(), f.predictions.end());
  }
  rep.balanced_accuracy = summarize(std::move(bacc));
  rep.accuracy = summarize(std::move(acc));
  rep.f1 = summarize(std::move(f1));
  rep.precision = summarize(std::move(prec));
  rep.auc_defined_folds = auc.size();
  rep.auc = summarize(std::move(auc));

  const std::size_t n = class_count(mode);
  ConfusionMatrix cm(n);
  std::vector<std::pair<double, int>> scored;
  for (const PredictionRow& p : pooled) {
    cm.add(p.true_class, p.decision);
    scored.emplace_back(p.gifs, p.true_class);
  }
  rep.pooled_balanced_accuracy = balanced_accuracy(cm);
  rep.pooled_accuracy = accuracy(cm);
  const PrecisionF1 pf = f1_precision(cm);
  rep.pooled_f1 = pf.f1;
  rep.pooled_precision = pf.precision;
  rep.pooled_auc = mode == ClassMode::Binary ? auc_binary(scored) : auc_macro_ovr(scored, n, true);
  return rep;
}

std::vector<FoldResult> run_loocv(const Dataset& ds, const EncoderConfig& enc_cfg,
                                  const TrainConfig& cfg, std::size_t jobs) {
  cfg.validate();
  const Dataset prepared = prepare_dataset(ds, enc_cfg);
  const std::vector<Fold> folds = loocv_folds(prepared);

  HeadConfig head_cfg;
  head_cfg.feature_dim = enc_cfg.feature_dim;
  head_cfg.hidden = cfg.hidden;
  head_cfg.mode = cfg.mode;
  head_cfg.cell = cfg.cell;

  std::vector<FoldResult> results(folds.size());
  std::vector<std::exception_ptr> failures(folds.size());
  std::atomic<std::size_t> cursor{0};

  auto worker = [&]() {
    while (true) {
      const std::size_t f = cursor.fetch_add(1);
      if (f >= folds.size()) return;
      try {
        FoldResult r;
        r.participant = folds[f].test_participant;
        Model model = Model::init(enc_cfg, head_cfg, cfg.seed ^ static_cast<std::uint64_t>(f));
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed ^ static_cast<std::uint64_t>(f);
        r.train_loss = train_one(folds[f].train, model, fold_cfg);
        EvalResult ev = evaluate(folds[f].test, model);
        r.predictions = std::move(ev.predictions);
        r.traces = std::move(ev.traces);
        r.metrics = fold_metrics(r.predictions, cfg.mode);
        r.model = std::move(model);
        results[f] = std::move(r);
      } catch (...) {
        failures[f] = std::current_exception();
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, folds.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (failures[f]) {
      try {
        std::rethrow_exception(failures[f]);
      } catch (const std::exception& e) {
        throw std::runtime_error("fold " + folds[f].test_participant + ": " + e.what());
      }
    }
  }
  return results;
}

}  // namespace rvt
