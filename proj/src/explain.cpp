#include "rvt/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "rvt/image.hpp"
#include "rvt/ops.hpp"

namespace rvt {

namespace {

std::string target_name(const SaliencyOptions& opts) {
  return opts.target == SaliencyTarget::Gifs ? "gifs" : "class" + std::to_string(opts.class_index);
}

// Picks the scalar to differentiate for clip j of a trace.
Tensor select_target(const SessionTrace& trace, std::size_t j, const SaliencyOptions& opts,
                     const HeadConfig& cfg) {
  if (opts.target == SaliencyTarget::Gifs) return trace.gifs[j];
  const std::size_t n = cfg.outputs();
  if (opts.class_index < 0 || static_cast<std::size_t>(opts.class_index) >= n) {
    throw std::runtime_error("saliency: class index " + std::to_string(opts.class_index) +
                             " out of range for " + std::to_string(n) + " outputs");
  }
  return ops::sum_all(ops::slice(trace.logits[j], 0, static_cast<std::size_t>(opts.class_index), 1));
}

// Turns the gradient held by a composed-input leaf (T,1,H,W) into a
// normalized (H, W-1) map; the mask column is dropped.
SaliencyMap map_from_leaf(const Tensor& leaf, int clip_index, const SaliencyOptions& opts) {
  const Shape& s = leaf.shape();
  const std::size_t t = s[0], h = s[2], w = s[3];
  if (w < 2) throw std::runtime_error("saliency: composed input has no face columns");
  const std::size_t fw = w - 1;

  SaliencyMap map;
  map.height = h;
  map.width = fw;
  map.clip_index = clip_index;
  map.target = target_name(opts);
  map.values.assign(h * fw, 0.0);

  auto grad = leaf.grad();
  auto vals = leaf.values();
  const bool have_grad = !grad.empty();

  auto normalize = [](std::vector<double>& v) {
    double lo = v.front(), hi = v.front();
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi == lo) {
      std::fill(v.begin(), v.end(), 0.0);
      return false;
    }
    for (double& x : v) x = (x - lo) / (hi - lo);
    return true;
  };

  std::vector<double> frame(h * fw, 0.0);
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < fw; ++x) {
        const std::size_t src = (f * h + y) * w + x;
        double g = have_grad ? grad[src] : 0.0;
        if (opts.grad_times_input) g *= vals[src];
        const double a = std::fabs(g);
        map.values[y * fw + x] += a / static_cast<double>(t);
        frame[y * fw + x] = a;
      }
    }
    if (opts.keep_frames) {
      std::vector<double> copy = frame;
      normalize(copy);
      map.per_frame.push_back(std::move(copy));
    }
  }
  map.degenerate = !normalize(map.values);
  return map;
}

}  // namespace

std::vector<SaliencyMap> saliency_session(const Session& session, const Model& model,
                                          const SaliencyOptions& opts) {
  std::vector<Tensor> leaves;
  SessionTrace trace = forward_session(session, model, &leaves);
  std::vector<SaliencyMap> maps;
  maps.reserve(leaves.size());
  for (std::size_t j = 0; j < leaves.size(); ++j) {
    Tensor target = select_target(trace, j, opts, model.head_cfg);
    zero_graph_grads(target);
    target.backward();
    maps.push_back(map_from_leaf(leaves[j], session.clips[j].index, opts));
  }
  return maps;
}

SaliencyMap saliency_clip(const Clip& clip, bool mask_flag, const Model& model,
                          const SaliencyOptions& opts) {
  Tensor composed = compose_input(clip.frames, mask_flag, true);
  Tensor feature = encode_clip(composed, model.enc, model.enc_cfg);
  SessionTrace trace = run_session({feature}, model.head, model.head_cfg);
  Tensor target = select_target(trace, 0, opts, model.head_cfg);
  target.backward();
  return map_from_leaf(composed, clip.index, opts);
}

LandmarkReport aggregate_landmarks(const std::vector<SaliencyMap>& maps,
                                   const std::vector<std::vector<Landmark>>& landmarks,
                                   std::size_t radius_px) {
  if (maps.empty()) throw std::runtime_error("aggregate_landmarks: no maps");
  if (maps.size() != landmarks.size()) {
    throw std::runtime_error("aggregate_landmarks: " + std::to_string(maps.size()) + " maps vs " +
                             std::to_string(landmarks.size()) + " landmark sets");
  }
  const std::size_t h = maps.front().height, w = maps.front().width;

  struct Acc {
    std::string name;
    double x = 0.0, y = 0.0;
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<int, Acc> acc;
  LandmarkReport report;

  const long radius = static_cast<long>(radius_px);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const SaliencyMap& map = maps[m];
    if (map.height != h || map.width != w) {
      throw std::runtime_error("aggregate_landmarks: map geometry mismatch");
    }
    for (const Landmark& lm : landmarks[m]) {
      long cx = std::lround(lm.x);
      long cy = std::lround(lm.y);
      const bool inside = cx >= 0 && cy >= 0 && cx < static_cast<long>(w) && cy < static_cast<long>(h);
      if (!inside) {
        cx = std::clamp(cx, 0L, static_cast<long>(w) - 1);
        cy = std::clamp(cy, 0L, static_cast<long>(h) - 1);
        ++report.clamped;
      }
      const long y0 = std::max(0L, cy - radius), y1 = std::min(static_cast<long>(h) - 1, cy + radius);
      const long x0 = std::max(0L, cx - radius), x1 = std::min(static_cast<long>(w) - 1, cx + radius);
      double sum = 0.0;
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          sum += map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        }
      }
      const double mean = sum / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
      Acc& a = acc[lm.id];
      if (a.n == 0) {
        a.name = lm.name;
        a.x = lm.x;
        a.y = lm.y;
      }
      a.sum += mean;
      ++a.n;
    }
  }

  double peak = 0.0;
  for (auto& [id, a] : acc) peak = std::max(peak, a.sum / static_cast<double>(a.n));
  for (auto& [id, a] : acc) {
    LandmarkAttention e;
    e.id = id;
    e.name = a.name;
    e.x = a.x;
    e.y = a.y;
    const double mean = a.sum / static_cast<double>(a.n);
    e.value = peak > 0.0 ? mean / peak : 0.0;
    report.entries.push_back(std::move(e));
  }
  return report;
}

double top_fraction_in_rows(const SaliencyMap& map, std::size_t row_begin, std::size_t row_end,
                            double quantile) {
  if (row_begin >= row_end || row_end > map.height) {
    throw std::runtime_error("top_fraction_in_rows: bad row range");
  }
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw std::runtime_error("top_fraction_in_rows: quantile must be in (0,1)");
  }
  const std::size_t n = map.values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Highest values first; ties broken by pixel index for determinism.
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (map.values[a] != map.values[b]) return map.values[a] > map.values[b];
    return a < b;
  });
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        std::floor(static_cast<double>(n) * (1.0 - quantile))));
  double total = 0.0, in_rows = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t y = idx[i] / map.width;
    total += map.values[idx[i]];
    if (y >= row_begin && y < row_end) in_rows += map.values[idx[i]];
  }
  if (total == 0.0) return 0.0;
  return in_rows / total;
}

void write_saliency_pgm(const std::string& path, const SaliencyMap& map) {
  write_pgm(path, quantize_frame(map.values.data(), map.height, map.width));
}

void write_saliency_overlay_ppm(const std::string& path, const SaliencyMap& map,
                                const Tensor& frames) {
  const Shape& s = frames.shape();
  if (frames.rank() != 4 || s[2] != map.height || s[3] != map.width) {
    throw std::runtime_error("saliency overlay: frames do not match map geometry");
  }
  const std::size_t t = s[0], h = s[2], w = s[3];
  std::vector<double> mean(h * w, 0.0);
  auto vals = frames.values();
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t i = 0; i < h * w; ++i) mean[i] += vals[f * h * w + i] / static_cast<double>(t);
  }
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double gray = std::clamp(mean[i], 0.0, 1.0);
    const double heat = map.values[i];
    const double alpha = 0.6 * heat;
    const double r = (1.0 - alpha) * gray + alpha;
    const double g = (1.0 - alpha) * gray;
    rgb[i * 3 + 0] = static_cast<std::uint8_t>(std::lround(r * 255.0));
    rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::lround(g * 255.0));
    rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::lround(g * 255.0));
  }
  write_ppm(path, h, w, rgb);
}

}  // namespace rvt
