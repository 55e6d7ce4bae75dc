#include "rvt/gee.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "rvt/metrics.hpp"

namespace rvt {

namespace {

// Dense row-major Cholesky: A = L Lᵀ, lower triangle returned in place.
// Throws when A is not (numerically) positive definite.
void chol_factor(std::vector<double>& a, std::size_t n, const std::string& what) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::fabs(a[i * n + i]));
  const double floor = std::max(max_diag, 1.0) * 1e-12;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > floor)) {
      throw std::runtime_error("gee: " + what + " is singular or not positive definite");
    }
    const double ljj = std::sqrt(d);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / ljj;
    }
  }
}

// Solves L Lᵀ x = b in place given the factor from chol_factor.
void chol_solve(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
    b[i] = s / l[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * b[k];
    b[ii] = s / l[ii * n + ii];
  }
}

struct Cluster {
  std::vector<std::size_t> rows;  // indices into table.rows, in time order
};

}  // namespace

void LongitudinalTable::validate() const {
  const std::size_t p = covariate_names.size();
  std::map<std::string, double> last_time;
  for (const GeeRow& r : rows) {
    if (r.covariates.size() != p) {
      throw std::runtime_error("gee: row in cluster " + r.cluster + " has " +
                               std::to_string(r.covariates.size()) + " covariates, expected " +
                               std::to_string(p));
    }
    if (!(r.outcome > 0.0)) {
      throw std::runtime_error("gee: non-positive outcome in cluster " + r.cluster);
    }
    auto it = last_time.find(r.cluster);
    if (it != last_time.end() && !(r.time > it->second)) {
      throw std::runtime_error("gee: times not strictly increasing within cluster " + r.cluster);
    }
    last_time[r.cluster] = r.time;
  }
}

LongitudinalTable standardize_covariates(const LongitudinalTable& table) {
  LongitudinalTable out = table;
  const std::size_t p = table.covariate_names.size();
  const std::size_t n = table.rows.size();
  if (n < 2) return out;
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (const GeeRow& r : table.rows) mean += r.covariates[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const GeeRow& r : table.rows) {
      const double d = r.covariates[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    if (sd == 0.0) {
      throw std::runtime_error("gee: covariate " + table.covariate_names[j] + " is constant");
    }
    for (GeeRow& r : out.rows) r.covariates[j] = (r.covariates[j] - mean) / sd;
  }
  return out;
}

GeeFit fit_gee(const LongitudinalTable& table, const std::vector<std::size_t>& covariate_subset,
               WorkingCorrelation corr, double tol, std::size_t max_iter) {
  table.validate();
  for (std::size_t j : covariate_subset) {
    if (j >= table.covariate_names.size()) {
      throw std::runtime_error("gee: covariate index " + std::to_string(j) + " out of range");
    }
  }

  // Group rows by cluster, keeping first-appearance order.
  std::vector<std::string> cluster_ids;
  std::map<std::string, std::size_t> cluster_index;
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const std::string& c = table.rows[i].cluster;
    auto [it, inserted] = cluster_index.try_emplace(c, clusters.size());
    if (inserted) {
      clusters.emplace_back();
      cluster_ids.push_back(c);
    }
    clusters[it->second].rows.push_back(i);
  }
  if (clusters.size() < 2) {
    throw std::runtime_error("gee: need at least 2 clusters, got " + std::to_string(clusters.size()));
  }

  const std::size_t p = covariate_subset.size() + 1;  // intercept first
  const std::size_t n_total = table.rows.size();
  if (n_total <= p) throw std::runtime_error("gee: more parameters than observations");

  auto design_row = [&](std::size_t row, std::vector<double>& x) {
    x[0] = 1.0;
    for (std::size_t j = 0; j < covariate_subset.size(); ++j) {
      x[j + 1] = table.rows[row].covariates[covariate_subset[j]];
    }
  };

  GeeFit fit;
  fit.terms.push_back("intercept");
  for (std::size_t j : covariate_subset) fit.terms.push_back(table.covariate_names[j]);
  fit.n_clusters = clusters.size();
  fit.beta.assign(p, 0.0);

  std::vector<double> beta(p, 0.0);
  double alpha = 0.0;
  double phi = 1.0;
  bool converged = false;
  std::size_t iterations = 0;

  std::vector<double> xrow(p);

  // Residuals at the current beta.
  auto residual = [&](std::size_t row) {
    design_row(row, xrow);
    double mu = 0.0;
    for (std::size_t j = 0; j < p; ++j) mu += xrow[j] * beta[j];
    return table.rows[row].outcome - mu;
  };

  // Working correlation for one cluster, from the time stamps.
  auto build_corr = [&](const Cluster& cl, std::vector<double>& r) {
    const std::size_t m = cl.rows.size();
    r.assign(m * m, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
      r[a * m + a] = 1.0;
      for (std::size_t b = a + 1; b < m; ++b) {
        const double gap = std::fabs(table.rows[cl.rows[a]].time - table.rows[cl.rows[b]].time);
        const double v = alpha == 0.0 ? 0.0 : std::pow(alpha, gap);
        if (!std::isfinite(v)) {
          throw std::runtime_error("gee: AR(1) correlation undefined for alpha=" +
                                   std::to_string(alpha) + ", time gap " + std::to_string(gap));
        }
        r[a * m + b] = v;
        r[b * m + a] = v;
      }
    }
  };

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    iterations = iter;

    if (iter > 1) {
      // Moment estimates of dispersion and the lag-1 correlation.
      double ss = 0.0;
      for (std::size_t i = 0; i < n_total; ++i) {
        const double e = residual(i);
        ss += e * e;
      }
      phi = ss / static_cast<double>(n_total - p);
      if (!(phi > 0.0)) throw std::runtime_error("gee: zero dispersion (perfect fit)");
      if (corr == WorkingCorrelation::Ar1) {
        double cross = 0.0;
        std::size_t pairs = 0;
        for (const Cluster& cl : clusters) {
          for (std::size_t a = 0; a + 1 < cl.rows.size(); ++a) {
            cross += residual(cl.rows[a]) * residual(cl.rows[a + 1]);
            ++pairs;
          }
        }
        if (pairs <= p) throw std::runtime_error("gee: too few adjacent pairs to estimate AR(1)");
        alpha = cross / (static_cast<double>(pairs - p) * phi);
        if (!(std::fabs(alpha) < 1.0)) {
          throw std::runtime_error("gee: AR(1) estimate out of range, alpha=" + std::to_string(alpha));
        }
      }
    }

    // Fisher scoring step: solve (Σ XᵀR⁻¹X) Δ = Σ XᵀR⁻¹e.
    std::vector<double> bread(p * p, 0.0);
    std::vector<double> score(p, 0.0);
    std::vector<double> rmat, rinv_e, rinv_x;
    for (const Cluster& cl : clusters) {
      const std::size_t m = cl.rows.size();
      build_corr(cl, rmat);
      chol_factor(rmat, m, "working correlation");
      rinv_e.resize(m);
      rinv_x.assign(m * p, 0.0);
      for (std::size_t a = 0; a < m; ++a) {
        rinv_e[a] = residual(cl.rows[a]);
        design_row(cl.rows[a], xrow);
        for (std::size_t j = 0; j < p; ++j) rinv_x[a * p + j] = xrow[j];
      }
      chol_solve(rmat, m, rinv_e);
      std::vector<double> col(m);
      for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t a = 0; a < m; ++a) col[a] = rinv_x[a * p + j];
        chol_solve(rmat, m, col);
        for (std::size_t a = 0; a < m; ++a) rinv_x[a * p + j] = col[a];
      }
      // rinv_x now holds R⁻¹X; accumulate XᵀR⁻¹X and XᵀR⁻¹e.
      for (std::size_t a = 0; a < m; ++a) {
        design_row(cl.rows[a], xrow);
        for (std::size_t j = 0; j < p; ++j) {
          score[j] += xrow[j] * rinv_e[a];
          for (std::size_t k = 0; k < p; ++k) bread[j * p + k] += xrow[j] * rinv_x[a * p + k];
        }
      }
    }
    chol_factor(bread, p, "design matrix (XᵀV⁻¹X)");
    chol_solve(bread, p, score);
    double step = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      beta[j] += score[j];
      step = std::max(step, std::fabs(score[j]));
    }
    if (step < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("gee: no convergence after " + std::to_string(max_iter) +
                             " iterations (correlation " +
                             (corr == WorkingCorrelation::Ar1 ? std::string("ar1") : std::string("independence")) + ")");
  }

  // Final moment estimates at the converged beta.
  {
    double ss = 0.0;
    for (std::size_t i = 0; i < n_total; ++i) {
      const double e = residual(i);
      ss += e * e;
    }
    phi = ss / static_cast<double>(n_total - p);
    if (corr == WorkingCorrelation::Ar1) {
      double cross = 0.0;
      std::size_t pairs = 0;
      for (const Cluster& cl : clusters) {
        for (std::size_t a = 0; a + 1 < cl.rows.size(); ++a) {
          cross += residual(cl.rows[a]) * residual(cl.rows[a + 1]);
          ++pairs;
        }
      }
      alpha = phi > 0.0 ? cross / (static_cast<double>(pairs - p) * phi) : 0.0;
      if (!(std::fabs(alpha) < 1.0)) {
        throw std::runtime_error("gee: AR(1) estimate out of range, alpha=" + std::to_string(alpha));
      }
    }
  }

  // Sandwich covariance B⁻¹ M B⁻¹ with the converged residuals.
  std::vector<double> bread(p * p, 0.0);
  std::vector<double> meat(p * p, 0.0);
  std::vector<double> rmat, rinv_e, rinv_x, xr_e(p);
  for (const Cluster& cl : clusters) {
    const std::size_t m = cl.rows.size();
    build_corr(cl, rmat);
    chol_factor(rmat, m, "working correlation");
    rinv_e.resize(m);
    rinv_x.assign(m * p, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
      rinv_e[a] = residual(cl.rows[a]);
      design_row(cl.rows[a], xrow);
      for (std::size_t j = 0; j < p; ++j) rinv_x[a * p + j] = xrow[j];
    }
    chol_solve(rmat, m, rinv_e);
    std::vector<double> col(m);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t a = 0; a < m; ++a) col[a] = rinv_x[a * p + j];
      chol_solve(rmat, m, col);
      for (std::size_t a = 0; a < m; ++a) rinv_x[a * p + j] = col[a];
    }
    std::fill(xr_e.begin(), xr_e.end(), 0.0);
    for (std::size_t a = 0; a < m; ++a) {
      design_row(cl.rows[a], xrow);
      for (std::size_t j = 0; j < p; ++j) {
        xr_e[j] += xrow[j] * rinv_e[a];
        for (std::size_t k = 0; k < p; ++k) bread[j * p + k] += xrow[j] * rinv_x[a * p + k];
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = 0; k < p; ++k) meat[j * p + k] += xr_e[j] * xr_e[k];
    }
  }
  // cov = B⁻¹ M B⁻¹ via two solves against the factored bread.
  std::vector<double> bfac = bread;
  chol_factor(bfac, p, "design matrix (XᵀV⁻¹X)");
  std::vector<double> cov(p * p, 0.0);
  std::vector<double> col(p);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t j = 0; j < p; ++j) col[j] = meat[j * p + k];
    chol_solve(bfac, p, col);  // B⁻¹M column
    for (std::size_t j = 0; j < p; ++j) cov[j * p + k] = col[j];
  }
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < p; ++k) col[k] = cov[j * p + k];  // row j of B⁻¹M
    chol_solve(bfac, p, col);  // times B⁻¹ (symmetric)
    for (std::size_t k = 0; k < p; ++k) cov[j * p + k] = col[k];
  }
  // Symmetrize against round-off.
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = j + 1; k < p; ++k) {
      const double v = 0.5 * (cov[j * p + k] + cov[k * p + j]);
      cov[j * p + k] = v;
      cov[k * p + j] = v;
    }
  }

  fit.beta = beta;
  fit.sandwich_cov = cov;
  fit.alpha_hat = corr == WorkingCorrelation::Ar1 ? alpha : 0.0;
  fit.phi = phi;
  fit.converged = converged;
  fit.iterations = iterations;
  fit.se.resize(p);
  fit.wald.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    const double v = cov[j * p + j];
    if (v < 0.0) throw std::runtime_error("gee: negative variance in sandwich covariance");
    fit.se[j] = std::sqrt(v);
    const double chi2 = fit.se[j] > 0.0 ? (beta[j] / fit.se[j]) * (beta[j] / fit.se[j]) : 0.0;
    fit.wald[j] = WaldTest{chi2, chi2_sf1(chi2)};
  }
  return fit;
}

LongitudinalTable build_rt_table(const Dataset& ds, const SessionGifs& gifs, GifsAggregation agg) {
  LongitudinalTable table;
  table.covariate_names = {"session", "l_mean", "gifs"};
  for (const auto& s : ds.sessions) {
    if (!s->reaction_time.has_value()) continue;
    auto it = gifs.find({s->participant_id, s->session_index});
    if (it == gifs.end()) {
      throw std::runtime_error("gee: no trace for participant " + s->participant_id + " session " +
                               std::to_string(s->session_index));
    }
    const std::vector<double>& g = it->second;
    if (g.size() != s->clips.size()) {
      throw std::runtime_error("gee: trace for participant " + s->participant_id + " session " +
                               std::to_string(s->session_index) + " has " + std::to_string(g.size()) +
                               " clips, session has " + std::to_string(s->clips.size()));
    }
    double gifs_session = 0.0;
    if (agg == GifsAggregation::Mean) {
      gifs_session = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    } else {
      gifs_session = 0.5 * (g.front() + g.back());
    }
    GeeRow row;
    row.cluster = s->participant_id;
    row.time = static_cast<double>(s->session_index);
    row.outcome = *s->reaction_time;
    row.covariates = {static_cast<double>(s->session_index), 0.5 * (s->pre + s->post), gifs_session};
    table.rows.push_back(std::move(row));
  }
  return table;
}

GifsValidation validate_gifs(const Dataset& ds, const SessionGifs& gifs, GifsAggregation agg) {
  const LongitudinalTable table = build_rt_table(ds, gifs, agg);
  std::set<std::string> clusters;
  for (const GeeRow& r : table.rows) clusters.insert(r.cluster);
  if (clusters.size() < 2) {
    throw std::runtime_error("gee: need reaction times from at least 2 participants, got " +
                             std::to_string(clusters.size()));
  }
  GifsValidation v;
  v.rt_vs_session = fit_gee(table, {0}, WorkingCorrelation::Ar1);
  v.rt_vs_session_lmean = fit_gee(table, {0, 1}, WorkingCorrelation::Ar1);
  v.rt_vs_full = fit_gee(table, {0, 1, 2}, WorkingCorrelation::Ar1);
  v.session_negative_significant =
      v.rt_vs_session.beta[1] < 0.0 && v.rt_vs_session.wald[1].p < 0.05;
  v.lmean_positive = v.rt_vs_session_lmean.beta[2] > 0.0;
  v.gifs_positive = v.rt_vs_full.beta[3] > 0.0;
  return v;
}

}  // namespace rvt
