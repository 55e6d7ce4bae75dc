#include "rvt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rvt {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

double chi2_sf1(double x) {
  if (x < 0.0) throw std::runtime_error("chi2_sf1: negative statistic");
  return std::erfc(std::sqrt(x / 2.0));
}

std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes < 2) throw std::runtime_error("confusion matrix needs at least 2 classes");
}

void ConfusionMatrix::add(int true_class, int predicted_class, std::size_t count) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= n_ || predicted_class < 0 ||
      static_cast<std::size_t>(predicted_class) >= n_) {
    throw std::runtime_error("confusion matrix: class out of range (true=" +
                             std::to_string(true_class) + ", predicted=" +
                             std::to_string(predicted_class) + ", classes=" + std::to_string(n_) + ")");
  }
  counts_[static_cast<std::size_t>(true_class) * n_ + static_cast<std::size_t>(predicted_class)] += count;
}

std::size_t ConfusionMatrix::at(std::size_t t, std::size_t p) const {
  if (t >= n_ || p >= n_) throw std::runtime_error("confusion matrix: index out of range");
  return counts_[t * n_ + p];
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t t) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(t, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t p) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(t, p);
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::size_t tot = cm.total();
  if (tot == 0) throw std::runtime_error("accuracy: empty confusion matrix");
  std::size_t hit = 0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) hit += cm.at(c, c);
  return static_cast<double>(hit) / static_cast<double>(tot);
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const std::size_t support = cm.row_sum(c);
    if (support == 0) {
      throw std::runtime_error("balanced_accuracy: class " + std::to_string(c) + " has no true samples");
    }
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
  }
  return sum / static_cast<double>(cm.n_classes());
}

double balanced_accuracy_supported(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const std::size_t support = cm.row_sum(c);
    if (support == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    ++present;
  }
  if (present == 0) throw std::runtime_error("balanced_accuracy: no scored predictions");
  return sum / static_cast<double>(present);
}

namespace {

PrecisionF1 class_precision_f1(const ConfusionMatrix& cm, std::size_t c) {
  const double tp = static_cast<double>(cm.at(c, c));
  const double pred = static_cast<double>(cm.col_sum(c));
  const double support = static_cast<double>(cm.row_sum(c));
  PrecisionF1 out;
  out.precision = pred > 0.0 ? tp / pred : 0.0;
  const double recall = support > 0.0 ? tp / support : 0.0;
  const double denom = out.precision + recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * recall / denom : 0.0;
  return out;
}

}  // namespace

PrecisionF1 f1_precision(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::runtime_error("f1_precision: empty confusion matrix");
  if (cm.n_classes() == 2) return class_precision_f1(cm, 1);
  PrecisionF1 out;
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const PrecisionF1 pc = class_precision_f1(cm, c);
    out.precision += pc.precision;
    out.f1 += pc.f1;
  }
  out.precision /= static_cast<double>(cm.n_classes());
  out.f1 /= static_cast<double>(cm.n_classes());
  return out;
}

double auc_binary(const std::vector<std::pair<double, int>>& scored) {
  std::vector<double> scores;
  scores.reserve(scored.size());
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& [s, y] : scored) {
    if (y != 0 && y != 1) throw std::runtime_error("auc: labels must be 0/1, got " + std::to_string(y));
    scores.push_back(s);
    (y == 1 ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw std::runtime_error("auc: both classes must be present (positives=" + std::to_string(n_pos) +
                             ", negatives=" + std::to_string(n_neg) + ")");
  }
  const std::vector<double> ranks = midranks(scores);
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].second == 1) pos_rank_sum += ranks[i];
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double auc_macro_ovr(const std::vector<std::pair<double, int>>& gifs_and_class,
                     std::size_t n_classes, bool strict) {
  if (n_classes < 2) throw std::runtime_error("auc: need at least 2 classes");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::pair<double, int>> rest;
    rest.reserve(gifs_and_class.size());
    std::size_t pos = 0;
    for (const auto& [g, y] : gifs_and_class) {
      if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
        throw std::runtime_error("auc: class " + std::to_string(y) + " out of range");
      }
      // Affinity of the continuous score for class c; peaks when the
      // expected class lands exactly on c.
      const double affinity = -std::fabs(g * static_cast<double>(n_classes - 1) - static_cast<double>(c));
      const int is_c = static_cast<std::size_t>(y) == c ? 1 : 0;
      pos += static_cast<std::size_t>(is_c);
      rest.emplace_back(affinity, is_c);
    }
    if (pos == 0 || pos == rest.size()) {
      if (strict) {
        throw std::runtime_error("auc: class " + std::to_string(c) +
                                 " is absent or universal; one-vs-rest AUC undefined");
      }
      continue;
    }
    sum += auc_binary(rest);
    ++used;
  }
  if (used == 0) throw std::runtime_error("auc: no class admits a one-vs-rest split");
  return sum / static_cast<double>(used);
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::runtime_error("wilcoxon: length mismatch (" + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
  }
  std::vector<double> diff;
  diff.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty()) throw std::runtime_error("wilcoxon: all differences are zero");
  if (diff.size() < 5) {
    throw std::runtime_error("wilcoxon: need at least 5 nonzero differences, got " +
                             std::to_string(diff.size()));
  }

  const std::size_t n = diff.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::fabs(diff[i]);
  const std::vector<double> ranks = midranks(mags);

  WilcoxonResult res;
  res.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (diff[i] > 0.0) res.w_plus += ranks[i];
  }

  if (n <= 20) {
    // Exact two-sided p by counting sign assignments. Midranks are halves,
    // so doubling every rank makes the walk integral.
    std::vector<long long> r2(n);
    long long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = std::llround(ranks[i] * 2.0);
      total2 += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      reach += r2[i];
      for (long long s = reach; s >= r2[i]; --s) {
        count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r2[i])];
      }
    }
    const long long w2 = std::llround(res.w_plus * 2.0);
    double lo = 0.0, hi = 0.0;
    for (long long s = 0; s <= total2; ++s) {
      if (s <= w2) lo += count[static_cast<std::size_t>(s)];
      if (s >= w2) hi += count[static_cast<std::size_t>(s)];
    }
    const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n assignments
    res.p = std::min(1.0, 2.0 * std::min(lo, hi) / denom);
    res.exact = true;
    return res;
  }

  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
  // Tie correction: subtract (t^3 - t)/48 per group of tied magnitudes.
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    var -= (t * t * t - t) / 48.0;
    i = j + 1;
  }
  if (var <= 0.0) throw std::runtime_error("wilcoxon: zero variance after tie correction");
  const double z = std::max(std::fabs(res.w_plus - mean) - 0.5, 0.0) / std::sqrt(var);
  res.p = std::min(1.0, 2.0 * normal_sf(z));
  res.exact = false;
  return res;
}

}  // namespace rvt
