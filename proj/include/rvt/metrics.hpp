#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace rvt {

// Upper tail of the standard normal distribution.
double normal_sf(double z);
// Upper tail of the chi-squared distribution with 1 degree of freedom.
double chi2_sf1(double x);

// Midranks (1-based, ties averaged) of the given values.
std::vector<double> midranks(const std::vector<double>& values);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);

  void add(int true_class, int predicted_class, std::size_t count = 1);
  std::size_t at(std::size_t true_class, std::size_t predicted_class) const;
  std::size_t n_classes() const { return n_; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t true_class) const;   // support of a class
  std::size_t col_sum(std::size_t predicted_class) const;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

// Fraction of predictions on the diagonal.
double accuracy(const ConfusionMatrix& cm);

// Mean per-class recall. Errors if any class has no true samples.
double balanced_accuracy(const ConfusionMatrix& cm);
// Mean recall over the classes that do appear; for per-fold reports where a
// left-out participant may not cover every class.
double balanced_accuracy_supported(const ConfusionMatrix& cm);

struct PrecisionF1 {
  double precision = 0.0;
  double f1 = 0.0;
};

// Binary: precision / F1 of the positive class (class 1). Multi-class: macro
// averages. Zero-denominator per-class values count as 0.
PrecisionF1 f1_precision(const ConfusionMatrix& cm);

// Area under the ROC curve by midranks; exactly the all-pairs probability
// P(score_pos > score_neg) + 0.5 P(tie). Errors unless both labels occur.
double auc_binary(const std::vector<std::pair<double, int>>& scored);

// One-vs-rest macro AUC for an n-class problem scored by a single gifs value
// per item: class-c affinity is -|gifs*(n-1) - c|. `strict` errors on any
// class that is absent (or universal); otherwise such classes are skipped.
double auc_macro_ovr(const std::vector<std::pair<double, int>>& gifs_and_class,
                     std::size_t n_classes, bool strict = true);

struct WilcoxonResult {
  double w_plus = 0.0;  // sum of ranks of positive differences
  std::size_t n = 0;    // pairs remaining after dropping zero differences
  double p = 1.0;       // two-sided
  bool exact = false;   // enumeration (n <= 20) vs normal approximation
};

// Paired two-sided Wilcoxon signed-rank test of a vs b.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace rvt
