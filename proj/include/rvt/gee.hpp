#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rvt/data.hpp"

namespace rvt {

// One observation in a longitudinal layout: `cluster` groups repeated
// measurements of a participant, `time` orders them.
struct GeeRow {
  std::string cluster;
  double time = 0.0;
  double outcome = 0.0;
  std::vector<double> covariates;
};

struct LongitudinalTable {
  std::vector<std::string> covariate_names;
  std::vector<GeeRow> rows;

  void validate() const;  // grouping, strictly increasing times, positive outcomes
};

// Z-scores every covariate column (not the outcome); for comparing
// coefficient magnitudes across differently scaled covariates.
LongitudinalTable standardize_covariates(const LongitudinalTable& table);

enum class WorkingCorrelation { Independence, Ar1 };

struct WaldTest {
  double chi2 = 0.0;
  double p = 1.0;
};

struct GeeFit {
  std::vector<std::string> terms;  // "intercept" then the selected covariates
  std::vector<double> beta;
  std::vector<double> sandwich_cov;  // p*p row-major
  std::vector<double> se;
  std::vector<WaldTest> wald;
  double alpha_hat = 0.0;  // AR(1) parameter; 0 under independence
  double phi = 1.0;        // dispersion
  std::size_t n_clusters = 0;
  bool converged = false;
  std::size_t iterations = 0;
};

// Gaussian-identity GEE of outcome on intercept + the selected covariates
// (indices into covariate_names), with robust (sandwich) covariance.
GeeFit fit_gee(const LongitudinalTable& table, const std::vector<std::size_t>& covariate_subset,
               WorkingCorrelation corr, double tol = 1e-10, std::size_t max_iter = 100);

// Per-clip scores for one session, keyed by (participant, session index).
using SessionGifs = std::map<std::pair<std::string, std::size_t>, std::vector<double>>;

enum class GifsAggregation { Mean, EndpointMean };

// Reaction-time table with covariates (session, l_mean, gifs); sessions
// without a reaction time are dropped.
LongitudinalTable build_rt_table(const Dataset& ds, const SessionGifs& gifs, GifsAggregation agg);

struct GifsValidation {
  GeeFit rt_vs_session;        // RT ~ session
  GeeFit rt_vs_session_lmean;  // RT ~ session + l_mean
  GeeFit rt_vs_full;           // RT ~ session + l_mean + gifs
  bool session_negative_significant = false;  // session coefficient < 0 with p < 0.05
  bool lmean_positive = false;
  bool gifs_positive = false;
};

// The three nested reaction-time models under AR(1), plus the sign report.
GifsValidation validate_gifs(const Dataset& ds, const SessionGifs& gifs,
                             GifsAggregation agg = GifsAggregation::Mean);

}  // namespace rvt
