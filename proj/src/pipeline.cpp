#include "rvt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rvt/explain.hpp"
#include "rvt/gee.hpp"
#include "rvt/manifest.hpp"
#include "rvt/metrics.hpp"
#include "rvt/synth.hpp"
#include "rvt/train.hpp"

namespace rvt {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("RVT_LOG_LEVEL");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    std::cerr << "[warn] unknown RVT_LOG_LEVEL '" << v << "', using info\n";
    return LogLevel::Info;
  }();
  return level;
}

void log(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("cannot format double");
  return std::string(buf, p);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_csv_double(const std::string& v, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("bad number '" + v + "' in " + file.string());
  }
}

int parse_csv_int(const std::string& v, const fs::path& file) {
  int x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::runtime_error("bad integer '" + v + "' in " + file.string());
  }
  return x;
}

HeadConfig head_config(const RunConfig& cfg) {
  HeadConfig h;
  h.feature_dim = cfg.encoder.feature_dim;
  h.hidden = cfg.train.hidden;
  h.mode = cfg.mode;
  h.cell = cfg.train.cell;
  return h;
}

RunConfig load_run_config(const fs::path& run_dir) {
  const fs::path snap = run_dir / "config.snapshot";
  if (!fs::exists(snap)) {
    throw std::runtime_error("no config.snapshot under " + run_dir.string() +
                             " (is this a run directory?)");
  }
  return parse_config_file(snap.string());
}

std::vector<fs::path> fold_dirs(const fs::path& run_dir) {
  const fs::path root = run_dir / "folds";
  if (!fs::is_directory(root)) {
    throw std::runtime_error("no folds/ under " + run_dir.string() + " (run loocv first)");
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no fold directories under " + root.string());
  return dirs;
}

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::string out = "participant_id,session_index,clip_index,true_class,decision,gifs\n";
  for (const PredictionRow& r : rows) {
    out += r.participant + "," + std::to_string(r.session_index) + "," +
           std::to_string(r.clip_index) + "," + std::to_string(r.true_class) + "," +
           std::to_string(r.decision) + "," + fmt_double(r.gifs) + "\n";
  }
  return out;
}

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "participant_id,session_index,clip_index,gifs,decision,hidden_norm\n";
  for (const TraceRow& r : rows) {
    out += r.participant + "," + std::to_string(r.session_index) + "," +
           std::to_string(r.clip_index) + "," + fmt_double(r.gifs) + "," +
           std::to_string(r.decision) + "," + fmt_double(r.hidden_norm) + "\n";
  }
  return out;
}

std::string train_loss_csv(const std::vector<double>& losses) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out += std::to_string(i + 1) + "," + fmt_double(losses[i]) + "\n";
  }
  return out;
}

std::vector<PredictionRow> read_predictions_csv(const fs::path& file) {
  std::istringstream in(read_text(file));
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"participant_id", "session_index", "clip_index",
                                                  "true_class", "decision", "gifs"}) {
    throw std::runtime_error("bad header in " + file.string());
  }
  std::vector<PredictionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw std::runtime_error("bad row in " + file.string());
    PredictionRow r;
    r.participant = f[0];
    r.session_index = parse_csv_int(f[1], file);
    r.clip_index = parse_csv_int(f[2], file);
    r.true_class = parse_csv_int(f[3], file);
    r.decision = parse_csv_int(f[4], file);
    r.gifs = parse_csv_double(f[5], file);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<TraceRow> read_trace_csv(const fs::path& file) {
  std::istringstream in(read_text(file));
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"participant_id", "session_index", "clip_index",
                                                  "gifs", "decision", "hidden_norm"}) {
    throw std::runtime_error("bad header in " + file.string());
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw std::runtime_error("bad row in " + file.string());
    TraceRow r;
    r.participant = f[0];
    r.session_index = parse_csv_int(f[1], file);
    r.clip_index = parse_csv_int(f[2], file);
    r.gifs = parse_csv_double(f[3], file);
    r.decision = parse_csv_int(f[4], file);
    r.hidden_norm = parse_csv_double(f[5], file);
    rows.push_back(std::move(r));
  }
  return rows;
}

ordered_json metrics_json(const FoldMetrics& m) {
  ordered_json j;
  j["balanced_accuracy"] = m.balanced_accuracy;
  j["accuracy"] = m.accuracy;
  j["f1"] = m.f1;
  j["precision"] = m.precision;
  if (m.auc) {
    j["auc"] = *m.auc;
  } else {
    j["auc"] = nullptr;
  }
  return j;
}

ordered_json summary_json(const MetricSummary& s) {
  ordered_json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["per_fold"] = s.per_fold;
  return j;
}

ordered_json aggregate_json(const std::vector<FoldResult>& folds, const AggregateReport& rep,
                            ClassMode mode) {
  ordered_json j;
  j["mode"] = class_mode_name(mode);
  j["n_folds"] = rep.n_folds;
  ordered_json fold_list = ordered_json::array();
  for (const FoldResult& f : folds) {
    ordered_json e;
    e["participant"] = f.participant;
    e["metrics"] = metrics_json(f.metrics);
    if (!f.train_loss.empty()) e["final_train_loss"] = f.train_loss.back();
    fold_list.push_back(std::move(e));
  }
  j["folds"] = std::move(fold_list);
  ordered_json s;
  s["balanced_accuracy"] = summary_json(rep.balanced_accuracy);
  s["accuracy"] = summary_json(rep.accuracy);
  s["f1"] = summary_json(rep.f1);
  s["precision"] = summary_json(rep.precision);
  s["auc"] = summary_json(rep.auc);
  s["auc"]["defined_folds"] = rep.auc_defined_folds;
  j["summary"] = std::move(s);
  ordered_json p;
  p["balanced_accuracy"] = rep.pooled_balanced_accuracy;
  p["accuracy"] = rep.pooled_accuracy;
  p["f1"] = rep.pooled_f1;
  p["precision"] = rep.pooled_precision;
  p["auc"] = rep.pooled_auc;
  j["pooled"] = std::move(p);
  return j;
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::runtime_error("synth: --out directory required");
  DatasetWriter writer(cfg.out_dir, cfg.mode);
  writer.set_synth_provenance(cfg.synth, cfg.seed);
  for (int p = 0; p < cfg.synth.participants; ++p) {
    for (int s = 1; s <= cfg.synth.sessions_per_participant; ++s) {
      writer.add_session(synthesize_session(cfg.synth, cfg.seed, p, s));
    }
    log(LogLevel::Debug, "synth: wrote participant " + synth_participant_id(p));
  }
  writer.finish();
  log(LogLevel::Info, "synth: " + std::to_string(cfg.synth.participants) + " participants x " +
                          std::to_string(cfg.synth.sessions_per_participant) + " sessions -> " +
                          cfg.out_dir);
}

void cmd_train(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw std::runtime_error("train: --data directory required");
  if (cfg.out_dir.empty()) throw std::runtime_error("train: --out directory required");
  const Dataset ds = load_dataset(cfg.data_dir);
  if (ds.mode != cfg.mode) {
    throw std::runtime_error("train: dataset mode " + class_mode_name(ds.mode) +
                             " does not match configured mode " + class_mode_name(cfg.mode));
  }
  const Dataset prepared = prepare_dataset(ds, cfg.encoder);
  Model model = Model::init(cfg.encoder, head_config(cfg), cfg.seed);
  const std::vector<double> losses = train_one(prepared, model, cfg.train);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "config.snapshot", serialize_config(cfg));
  save_model((fs::path(cfg.out_dir) / "checkpoint.rvt").string(), model);
  write_text(fs::path(cfg.out_dir) / "train_loss.csv", train_loss_csv(losses));
  log(LogLevel::Info, "train: final mean loss " + fmt_double(losses.back()) + " -> " + cfg.out_dir);
}

void cmd_loocv(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw std::runtime_error("loocv: --data directory required");
  if (cfg.out_dir.empty()) throw std::runtime_error("loocv: --out directory required");
  const Dataset ds = load_dataset(cfg.data_dir);
  if (ds.mode != cfg.mode) {
    throw std::runtime_error("loocv: dataset mode " + class_mode_name(ds.mode) +
                             " does not match configured mode " + class_mode_name(cfg.mode));
  }
  log(LogLevel::Info, "loocv: " + std::to_string(ds.participants().size()) + " folds, jobs=" +
                          std::to_string(cfg.jobs));
  const std::vector<FoldResult> results = run_loocv(ds, cfg.encoder, cfg.train, cfg.jobs);
  const std::vector<Fold> folds = loocv_folds(ds);

  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "folds");
  write_text(out / "config.snapshot", serialize_config(cfg));

  for (std::size_t f = 0; f < results.size(); ++f) {
    const FoldResult& r = results[f];
    const fs::path dir = out / "folds" / r.participant;
    fs::create_directories(dir);
    save_model((dir / "checkpoint.rvt").string(), r.model);
    write_text(dir / "predictions.csv", predictions_csv(r.predictions));
    write_text(dir / "trace.csv", trace_csv(r.traces));
    write_text(dir / "train_loss.csv", train_loss_csv(r.train_loss));

    ordered_json fj;
    fj["participant"] = r.participant;
    fj["fold_index"] = f;
    fj["seed"] = cfg.seed ^ static_cast<std::uint64_t>(f);
    auto session_list = [](const Dataset& d) {
      ordered_json a = ordered_json::array();
      for (const auto& s : d.sessions) {
        ordered_json e;
        e["participant"] = s->participant_id;
        e["session_index"] = s->session_index;
        a.push_back(std::move(e));
      }
      return a;
    };
    fj["test_sessions"] = session_list(folds[f].test);
    fj["train_sessions"] = session_list(folds[f].train);
    fj["metrics"] = metrics_json(r.metrics);
    write_json(dir / "fold.json", fj);
  }

  const AggregateReport rep = aggregate_folds(results, cfg.mode);
  write_json(out / "aggregate.json", aggregate_json(results, rep, cfg.mode));
  log(LogLevel::Info, "loocv: pooled balanced accuracy " + fmt_double(rep.pooled_balanced_accuracy) +
                          ", pooled auc " + fmt_double(rep.pooled_auc) + " -> " + cfg.out_dir);
}

namespace {

struct LoadedRun {
  RunConfig cfg;
  std::vector<FoldResult> folds;  // predictions + metrics only
};

LoadedRun load_run_predictions(const fs::path& run_dir) {
  LoadedRun run;
  run.cfg = load_run_config(run_dir);
  for (const fs::path& dir : fold_dirs(run_dir)) {
    FoldResult r;
    r.participant = dir.filename().string();
    r.predictions = read_predictions_csv(dir / "predictions.csv");
    r.metrics = fold_metrics(r.predictions, run.cfg.mode);
    run.folds.push_back(std::move(r));
  }
  return run;
}

}  // namespace

void cmd_eval(const std::string& run_dir, const std::string& compare_run) {
  LoadedRun run = load_run_predictions(run_dir);
  const AggregateReport rep = aggregate_folds(run.folds, run.cfg.mode);

  std::ostringstream table;
  table << "participant  bacc    acc     f1      prec    auc\n";
  for (const FoldResult& f : run.folds) {
    char buf[160];
    if (f.metrics.auc) {
      std::snprintf(buf, sizeof(buf), "%-12s %.4f  %.4f  %.4f  %.4f  %.4f\n", f.participant.c_str(),
                    f.metrics.balanced_accuracy, f.metrics.accuracy, f.metrics.f1,
                    f.metrics.precision, *f.metrics.auc);
    } else {
      std::snprintf(buf, sizeof(buf), "%-12s %.4f  %.4f  %.4f  %.4f  n/a\n", f.participant.c_str(),
                    f.metrics.balanced_accuracy, f.metrics.accuracy, f.metrics.f1,
                    f.metrics.precision);
    }
    table << buf;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "mean+/-std   %.4f+/-%.4f (bacc over %zu folds)\npooled       bacc %.4f  acc %.4f  "
                "f1 %.4f  prec %.4f  auc %.4f\n",
                rep.balanced_accuracy.mean, rep.balanced_accuracy.stddev, rep.n_folds,
                rep.pooled_balanced_accuracy, rep.pooled_accuracy, rep.pooled_f1,
                rep.pooled_precision, rep.pooled_auc);
  table << buf;
  std::cout << table.str();

  ordered_json j = aggregate_json(run.folds, rep, run.cfg.mode);

  if (!compare_run.empty()) {
    LoadedRun other = load_run_predictions(compare_run);
    if (other.folds.size() != run.folds.size()) {
      throw std::runtime_error("eval: fold count mismatch with " + compare_run);
    }
    std::vector<double> a, b;
    for (std::size_t f = 0; f < run.folds.size(); ++f) {
      if (run.folds[f].participant != other.folds[f].participant) {
        throw std::runtime_error("eval: fold participants differ at position " + std::to_string(f));
      }
      a.push_back(run.folds[f].metrics.balanced_accuracy);
      b.push_back(other.folds[f].metrics.balanced_accuracy);
    }
    const AggregateReport orep = aggregate_folds(other.folds, other.cfg.mode);
    const WilcoxonResult w = wilcoxon_signed_rank(a, b);
    ordered_json cj;
    cj["run"] = compare_run;
    cj["mean_balanced_accuracy"] = rep.balanced_accuracy.mean;
    cj["other_mean_balanced_accuracy"] = orep.balanced_accuracy.mean;
    cj["wilcoxon_w"] = w.w_plus;
    cj["wilcoxon_n"] = w.n;
    cj["wilcoxon_p"] = w.p;
    cj["exact"] = w.exact;
    j["comparison"] = std::move(cj);
    std::snprintf(buf, sizeof(buf),
                  "compare      mean bacc %.4f vs %.4f, Wilcoxon W=%.1f n=%zu p=%.6f (%s)\n",
                  rep.balanced_accuracy.mean, orep.balanced_accuracy.mean, w.w_plus, w.n, w.p,
                  w.exact ? "exact" : "normal approximation");
    std::cout << buf;
  }

  write_json(fs::path(run_dir) / "eval.json", j);
}

namespace {

SessionGifs collect_session_gifs(const fs::path& run_dir) {
  SessionGifs gifs;
  for (const fs::path& dir : fold_dirs(run_dir)) {
    for (const TraceRow& row : read_trace_csv(dir / "trace.csv")) {
      auto& v = gifs[std::make_pair(row.participant, static_cast<std::size_t>(row.session_index))];
      if (static_cast<std::size_t>(row.clip_index) > v.size()) {
        v.resize(static_cast<std::size_t>(row.clip_index), std::nan(""));
      }
      v[static_cast<std::size_t>(row.clip_index) - 1] = row.gifs;
    }
  }
  for (const auto& [key, v] : gifs) {
    for (double g : v) {
      if (std::isnan(g)) {
        throw std::runtime_error("gee: trace for participant " + key.first + " session " +
                                 std::to_string(key.second) + " has gaps");
      }
    }
  }
  return gifs;
}

ordered_json fit_json(const GeeFit& fit) {
  ordered_json j;
  ordered_json terms = ordered_json::array();
  for (std::size_t i = 0; i < fit.terms.size(); ++i) {
    ordered_json t;
    t["term"] = fit.terms[i];
    t["b"] = fit.beta[i];
    t["se"] = fit.se[i];
    t["wald_chi2"] = fit.wald[i].chi2;
    t["p"] = fit.wald[i].p;
    terms.push_back(std::move(t));
  }
  j["terms"] = std::move(terms);
  j["alpha_hat"] = fit.alpha_hat;
  j["dispersion"] = fit.phi;
  j["n_clusters"] = fit.n_clusters;
  j["iterations"] = fit.iterations;
  return j;
}

void print_fit(const std::string& title, const GeeFit& fit) {
  std::cout << title << "  (alpha=" << fit.alpha_hat << ", clusters=" << fit.n_clusters << ")\n";
  for (std::size_t i = 0; i < fit.terms.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-10s B=%+.5f  SE=%.5f  chi2=%8.3f  p=%.6f\n",
                  fit.terms[i].c_str(), fit.beta[i], fit.se[i], fit.wald[i].chi2, fit.wald[i].p);
    std::cout << buf;
  }
}

}  // namespace

void cmd_gee(const std::string& run_dir, std::string data_dir, const GeeOptions& opts) {
  const RunConfig cfg = load_run_config(run_dir);
  if (data_dir.empty()) data_dir = cfg.data_dir;
  if (data_dir.empty()) {
    throw std::runtime_error("gee: no --data given and the run config records no data path");
  }
  const Dataset ds = load_dataset_labels(data_dir);
  const SessionGifs gifs = collect_session_gifs(run_dir);
  const GifsAggregation agg =
      opts.endpoint_mean ? GifsAggregation::EndpointMean : GifsAggregation::Mean;

  GifsValidation v;
  if (opts.standardize) {
    const LongitudinalTable table = standardize_covariates(build_rt_table(ds, gifs, agg));
    v.rt_vs_session = fit_gee(table, {0}, WorkingCorrelation::Ar1);
    v.rt_vs_session_lmean = fit_gee(table, {0, 1}, WorkingCorrelation::Ar1);
    v.rt_vs_full = fit_gee(table, {0, 1, 2}, WorkingCorrelation::Ar1);
    v.session_negative_significant =
        v.rt_vs_session.beta[1] < 0.0 && v.rt_vs_session.wald[1].p < 0.05;
    v.lmean_positive = v.rt_vs_session_lmean.beta[2] > 0.0;
    v.gifs_positive = v.rt_vs_full.beta[3] > 0.0;
  } else {
    v = validate_gifs(ds, gifs, agg);
  }

  print_fit("model 1: rt ~ session", v.rt_vs_session);
  print_fit("model 2: rt ~ session + l_mean", v.rt_vs_session_lmean);
  print_fit("model 3: rt ~ session + l_mean + gifs", v.rt_vs_full);
  std::cout << "signs: session_negative_significant=" << (v.session_negative_significant ? "yes" : "no")
            << " lmean_positive=" << (v.lmean_positive ? "yes" : "no")
            << " gifs_positive=" << (v.gifs_positive ? "yes" : "no") << "\n";

  ordered_json j;
  j["standardized"] = opts.standardize;
  j["gifs_aggregation"] = opts.endpoint_mean ? "endpoint_mean" : "mean";
  j["rt_vs_session"] = fit_json(v.rt_vs_session);
  j["rt_vs_session_lmean"] = fit_json(v.rt_vs_session_lmean);
  j["rt_vs_full"] = fit_json(v.rt_vs_full);
  ordered_json signs;
  signs["session_negative_significant"] = v.session_negative_significant;
  signs["lmean_positive"] = v.lmean_positive;
  signs["gifs_positive"] = v.gifs_positive;
  j["signs"] = std::move(signs);
  write_json(fs::path(run_dir) / "gee.json", j);
}

void cmd_saliency(const std::string& run_dir, std::string data_dir, const SaliencyRunOptions& opts) {
  const RunConfig cfg = load_run_config(run_dir);
  if (data_dir.empty()) data_dir = cfg.data_dir;
  if (data_dir.empty()) {
    throw std::runtime_error("saliency: no --data given and the run config records no data path");
  }
  const Dataset ds = load_dataset(data_dir);
  const Dataset prepared = prepare_dataset(ds, cfg.encoder);

  std::map<std::string, std::vector<std::shared_ptr<const Session>>> by_participant;
  for (const auto& s : prepared.sessions) by_participant[s->participant_id].push_back(s);

  const fs::path out = fs::path(run_dir) / "saliency";
  fs::create_directories(out);

  SaliencyOptions sopts;
  sopts.grad_times_input = opts.grad_times_input;

  std::vector<SaliencyMap> all_maps;
  std::vector<std::vector<Landmark>> all_landmarks;
  std::size_t degenerate = 0;

  for (const fs::path& dir : fold_dirs(run_dir)) {
    const std::string pid = dir.filename().string();
    auto it = by_participant.find(pid);
    if (it == by_participant.end()) {
      throw std::runtime_error("saliency: fold participant " + pid + " not in dataset " + data_dir);
    }
    Model model = Model::init(cfg.encoder, head_config(cfg), 0);
    load_model((dir / "checkpoint.rvt").string(), model);
    for (const auto& s : it->second) {
      std::vector<SaliencyMap> maps = saliency_session(*s, model, sopts);
      for (std::size_t j = 0; j < maps.size(); ++j) {
        const std::string stem =
            pid + "_s" + std::to_string(s->session_index) + "_c" + std::to_string(maps[j].clip_index);
        write_saliency_pgm((out / (stem + ".pgm")).string(), maps[j]);
        write_saliency_overlay_ppm((out / (stem + "_overlay.ppm")).string(), maps[j],
                                   s->clips[j].frames);
        if (maps[j].degenerate) ++degenerate;
        all_landmarks.push_back(s->landmarks);
        all_maps.push_back(std::move(maps[j]));
      }
    }
    log(LogLevel::Debug, "saliency: finished fold " + pid);
  }

  const LandmarkReport report = aggregate_landmarks(all_maps, all_landmarks, opts.radius_px);
  std::string csv = "landmark_id,name,x,y,value\n";
  for (const LandmarkAttention& e : report.entries) {
    csv += std::to_string(e.id) + "," + e.name + "," + fmt_double(e.x) + "," + fmt_double(e.y) +
           "," + fmt_double(e.value) + "\n";
  }
  write_text(fs::path(run_dir) / "landmark_report.csv", csv);

  const auto band = eye_band_rows(cfg.synth, all_maps.front().height);
  double eye_fraction = 0.0;
  for (const SaliencyMap& m : all_maps) {
    eye_fraction += top_fraction_in_rows(m, band.first, band.second);
  }
  eye_fraction /= static_cast<double>(all_maps.size());

  ordered_json j;
  j["maps"] = all_maps.size();
  j["degenerate_maps"] = degenerate;
  j["eye_band_rows"] = {band.first, band.second};
  j["mean_top_decile_eye_fraction"] = eye_fraction;
  j["clamped_landmarks"] = report.clamped;
  ordered_json lm = ordered_json::array();
  for (const LandmarkAttention& e : report.entries) {
    ordered_json le;
    le["id"] = e.id;
    le["name"] = e.name;
    le["x"] = e.x;
    le["y"] = e.y;
    le["value"] = e.value;
    lm.push_back(std::move(le));
  }
  j["landmarks"] = std::move(lm);
  write_json(fs::path(run_dir) / "saliency.json", j);
  log(LogLevel::Info, "saliency: " + std::to_string(all_maps.size()) +
                          " maps, mean top-decile eye fraction " + fmt_double(eye_fraction));
}

std::size_t cmd_audit(const std::string& run_dir, std::string data_dir) {
  std::vector<std::string> problems;
  RunConfig cfg;
  bool have_cfg = false;
  try {
    cfg = load_run_config(run_dir);
    have_cfg = true;
  } catch (const std::exception& e) {
    problems.emplace_back(e.what());
  }

  std::size_t n_folds = 0;
  std::set<std::string> fold_participants;
  std::vector<std::pair<std::string, int>> all_test_sessions;

  if (have_cfg) {
    try {
      for (const fs::path& dir : fold_dirs(run_dir)) {
        ++n_folds;
        ordered_json fj;
        try {
          fj = ordered_json::parse(read_text(dir / "fold.json"));
        } catch (const std::exception& e) {
          problems.push_back("fold " + dir.filename().string() + ": unreadable fold.json (" +
                             e.what() + ")");
          continue;
        }
        const std::string pid = fj.at("participant").get<std::string>();
        if (pid != dir.filename().string()) {
          problems.push_back("fold " + dir.filename().string() + ": fold.json names participant " + pid);
        }
        if (!fold_participants.insert(pid).second) {
          problems.push_back("participant " + pid + " is the test subject of more than one fold");
        }
        for (const auto& e : fj.at("train_sessions")) {
          if (e.at("participant").get<std::string>() == pid) {
            problems.push_back("fold " + pid + ": test participant leaks into the train set (session " +
                               std::to_string(e.at("session_index").get<int>()) + ")");
          }
        }
        for (const auto& e : fj.at("test_sessions")) {
          const std::string sp = e.at("participant").get<std::string>();
          if (sp != pid) {
            problems.push_back("fold " + pid + ": test set contains foreign participant " + sp);
          }
          all_test_sessions.emplace_back(sp, e.at("session_index").get<int>());
        }
      }
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  }

  if (have_cfg && data_dir.empty()) data_dir = cfg.data_dir;
  if (!data_dir.empty() && fs::exists(data_dir)) {
    for (std::string& p : verify_dataset_dir(data_dir)) problems.push_back(std::move(p));
    // Every session of the dataset should be tested exactly once.
    try {
      const Dataset ds = load_dataset_labels(data_dir);
      std::vector<std::pair<std::string, int>> expected;
      for (const auto& s : ds.sessions) expected.emplace_back(s->participant_id, s->session_index);
      std::sort(expected.begin(), expected.end());
      std::sort(all_test_sessions.begin(), all_test_sessions.end());
      if (n_folds > 0 && expected != all_test_sessions) {
        problems.push_back("test sessions across folds do not partition the dataset");
      }
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  }

  for (const std::string& p : problems) log(LogLevel::Error, "audit: " + p);

  ordered_json j;
  j["run"] = run_dir;
  j["folds_checked"] = n_folds;
  j["test_participants"] = fold_participants.size();
  j["problems"] = problems;
  j["clean"] = problems.empty();
  write_json(fs::path(run_dir) / "audit.json", j);
  log(LogLevel::Info, "audit: " + std::to_string(n_folds) + " folds, " +
                          std::to_string(problems.size()) + " problems");
  return problems.size();
}

}  // namespace rvt
