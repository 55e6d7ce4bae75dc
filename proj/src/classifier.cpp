#include "rvt/classifier.hpp"

#include <cmath>
#include <stdexcept>

#include "rvt/ops.hpp"
#include "rvt/rng.hpp"

namespace rvt {

CellKind cell_kind_from_name(const std::string& name) {
  if (name == "rnn") return CellKind::Rnn;
  if (name == "gru") return CellKind::Gru;
  throw std::runtime_error("unknown cell kind '" + name + "' (expected rnn or gru)");
}

std::string cell_kind_name(CellKind cell) { return cell == CellKind::Rnn ? "rnn" : "gru"; }

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "absolute") return LossKind::Absolute;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  throw std::runtime_error("unknown loss kind '" + name + "' (expected absolute or cross_entropy)");
}

std::string loss_kind_name(LossKind kind) {
  return kind == LossKind::Absolute ? "absolute" : "cross_entropy";
}

void HeadConfig::validate() const {
  if (feature_dim == 0) throw std::runtime_error("head config: feature_dim must be positive");
  if (hidden == 0) throw std::runtime_error("head config: hidden must be positive");
}

std::size_t HeadConfig::outputs() const {
  return mode == ClassMode::Binary ? 1 : class_count(mode);
}

namespace {

Tensor gaussian_init(Shape shape, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, "init/" + name));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_vector(std::move(shape), std::move(data), true);
}

}  // namespace

HeadParams HeadParams::init(const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  HeadParams p;
  p.cell = cfg.cell;
  const std::size_t s = cfg.feature_dim, h = cfg.hidden, o = cfg.outputs();
  if (cfg.cell == CellKind::Rnn) {
    p.w_x = gaussian_init({s, h}, 0.02, seed, "head.w_x");
    p.w_h = gaussian_init({h, h}, 0.02, seed, "head.w_h");
    p.b_h = Tensor::zeros({h}, true);
  } else {
    p.w_xz = gaussian_init({s, h}, 0.02, seed, "head.w_xz");
    p.w_hz = gaussian_init({h, h}, 0.02, seed, "head.w_hz");
    p.b_z = Tensor::zeros({h}, true);
    p.w_xr = gaussian_init({s, h}, 0.02, seed, "head.w_xr");
    p.w_hr = gaussian_init({h, h}, 0.02, seed, "head.w_hr");
    p.b_r = Tensor::zeros({h}, true);
    p.w_xn = gaussian_init({s, h}, 0.02, seed, "head.w_xn");
    p.w_hn = gaussian_init({h, h}, 0.02, seed, "head.w_hn");
    p.b_n = Tensor::zeros({h}, true);
  }
  p.w_o = gaussian_init({h, o}, 0.02, seed, "head.w_o");
  p.b_o = Tensor::zeros({o}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> HeadParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (cell == CellKind::Rnn) {
    out.emplace_back("head.w_x", w_x);
    out.emplace_back("head.w_h", w_h);
    out.emplace_back("head.b_h", b_h);
  } else {
    out.emplace_back("head.w_xz", w_xz);
    out.emplace_back("head.w_hz", w_hz);
    out.emplace_back("head.b_z", b_z);
    out.emplace_back("head.w_xr", w_xr);
    out.emplace_back("head.w_hr", w_hr);
    out.emplace_back("head.b_r", b_r);
    out.emplace_back("head.w_xn", w_xn);
    out.emplace_back("head.w_hn", w_hn);
    out.emplace_back("head.b_n", b_n);
  }
  out.emplace_back("head.w_o", w_o);
  out.emplace_back("head.b_o", b_o);
  return out;
}

std::vector<Tensor> HeadParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named()) out.push_back(t);
  return out;
}

std::vector<Tensor> HeadParams::recurrent_parameters() const {
  if (cell == CellKind::Rnn) return {w_h};
  return {w_hz, w_hr, w_hn};
}

void HeadParams::set_requires_grad(bool v) {
  for (Tensor t : parameters()) t.set_requires_grad(v);
}

namespace {

Tensor cell_update(const Tensor& x, const Tensor& prev, const HeadParams& p) {
  const bool has_prev = prev.defined();
  if (p.cell == CellKind::Rnn) {
    Tensor pre = ops::add(ops::matmul(x, p.w_x), p.b_h);
    if (has_prev) pre = ops::add(pre, ops::matmul(prev, p.w_h));
    return ops::tanh(pre);
  }
  Tensor zpre = ops::add(ops::matmul(x, p.w_xz), p.b_z);
  Tensor rpre = ops::add(ops::matmul(x, p.w_xr), p.b_r);
  if (has_prev) {
    zpre = ops::add(zpre, ops::matmul(prev, p.w_hz));
    rpre = ops::add(rpre, ops::matmul(prev, p.w_hr));
  }
  Tensor z = ops::sigmoid(zpre);
  Tensor npre = ops::add(ops::matmul(x, p.w_xn), p.b_n);
  if (has_prev) npre = ops::add(npre, ops::matmul(ops::mul(ops::sigmoid(rpre), prev), p.w_hn));
  Tensor n = ops::tanh(npre);
  Tensor out = ops::mul(ops::sub(Tensor::full({p.b_z.shape()[0]}, 1.0), z), n);
  if (has_prev) out = ops::add(out, ops::mul(z, prev));
  return out;
}

}  // namespace

StepResult head_step(const Tensor& feature, const Tensor& prev, const HeadParams& p,
                     const HeadConfig& cfg) {
  if (!feature.defined() || feature.rank() != 1 || feature.shape()[0] != cfg.feature_dim) {
    throw std::runtime_error("head_step: feature must be a vector of length " +
                             std::to_string(cfg.feature_dim));
  }
  if (prev.defined() && (prev.rank() != 1 || prev.shape()[0] != cfg.hidden)) {
    throw std::runtime_error("head_step: previous state must be a vector of length " +
                             std::to_string(cfg.hidden));
  }
  StepResult r;
  r.state = cell_update(feature, prev, p);
  r.logits = ops::add(ops::matmul(r.state, p.w_o), p.b_o);
  if (cfg.mode == ClassMode::Binary) {
    r.probs = ops::sigmoid(r.logits);
    r.gifs = r.probs;
    r.decision = r.gifs.item() >= 0.5 ? 1 : 0;
  } else {
    r.probs = ops::softmax_lastdim(r.logits);
    const std::size_t n = cfg.outputs();
    std::vector<double> levels(n);
    for (std::size_t c = 0; c < n; ++c) levels[c] = static_cast<double>(c) / static_cast<double>(n - 1);
    r.gifs = ops::sum_all(ops::mul(r.probs, Tensor::from_vector({n}, std::move(levels))));
    auto pv = r.probs.values();
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (pv[c] > pv[best]) best = c;
    }
    r.decision = static_cast<int>(best);
  }
  return r;
}

SessionTrace run_session(const std::vector<Tensor>& features, const HeadParams& p,
                         const HeadConfig& cfg) {
  if (features.empty()) throw std::runtime_error("run_session: no clip features");
  SessionTrace trace;
  trace.gifs.reserve(features.size());
  trace.states.reserve(features.size());
  Tensor state;  // undefined = zero state ahead of clip 1
  for (const Tensor& f : features) {
    StepResult r = head_step(f, state, p, cfg);
    state = r.state;
    trace.gifs.push_back(r.gifs);
    trace.logits.push_back(r.logits);
    trace.probs.push_back(r.probs);
    trace.states.push_back(r.state);
    trace.decisions.push_back(r.decision);
    double sq = 0.0;
    for (double v : r.state.values()) sq += v * v;
    trace.hidden_norms.push_back(std::sqrt(sq));
  }
  return trace;
}

Tensor session_loss(const SessionTrace& trace, double pre, double post, const HeadConfig& cfg,
                    LossKind kind) {
  const std::size_t k = trace.gifs.size();
  if (k < 2) throw std::runtime_error("session_loss: need at least 2 clips, got " + std::to_string(k));
  const Tensor& first = trace.gifs.front();
  const Tensor& last = trace.gifs.back();
  if (cfg.mode == ClassMode::Binary) {
    const double y1 = static_cast<double>(binarize(pre));
    const double yk = static_cast<double>(binarize(post));
    if (kind == LossKind::Absolute) {
      return ops::add(ops::abs(ops::sub(first, Tensor::full(first.shape(), y1))),
                      ops::abs(ops::sub(last, Tensor::full(last.shape(), yk))));
    }
    auto bce = [](const Tensor& g, double y) {
      Tensor p = y >= 0.5 ? g : ops::sub(Tensor::full(g.shape(), 1.0), g);
      return ops::neg(ops::log(p));
    };
    return ops::sum_all(ops::add(bce(first, y1), bce(last, yk)));
  }
  const double denom = static_cast<double>(cfg.outputs() - 1);
  const int c1 = three_class(pre);
  const int ck = three_class(post);
  if (kind == LossKind::Absolute) {
    const double y1 = static_cast<double>(c1) / denom;
    const double yk = static_cast<double>(ck) / denom;
    return ops::add(ops::abs(ops::sub(first, Tensor::full(first.shape(), y1))),
                    ops::abs(ops::sub(last, Tensor::full(last.shape(), yk))));
  }
  auto nll = [](const Tensor& probs, int c) {
    return ops::neg(ops::log(ops::slice(probs, 0, static_cast<std::size_t>(c), 1)));
  };
  return ops::sum_all(ops::add(nll(trace.probs.front(), c1), nll(trace.probs.back(), ck)));
}

}  // namespace rvt
