#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cpnoise/errors.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/noise.hpp"

namespace cpnoise {

// Coverage sandwich [lower, upper] with the additive breakdown of the upper
// term; upper_raw may exceed 1 before clipping.
struct CoverageSandwich {
  double lower = 0.0;
  double upper = 0.0;      // clipped to 1
  double upper_raw = 0.0;  // alpha term + 1/(n+1) + noise term
  double alpha = 0.0;
  double finite_sample_term = 0.0;  // 1/(n+1)
  double noise_term = 0.0;          // u, TV term, eps(K-1)/K, ...
};

inline CoverageSandwich make_sandwich(double alpha, std::size_t n,
                                      double noise_term) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error("sandwich: alpha outside (0,1)");
  }
  if (noise_term < 0.0) throw std::domain_error("sandwich: negative noise term");
  CoverageSandwich s;
  s.alpha = alpha;
  s.finite_sample_term = 1.0 / (static_cast<double>(n) + 1.0);
  s.noise_term = noise_term;
  s.lower = 1.0 - alpha;
  s.upper_raw = 1.0 - alpha + s.finite_sample_term + noise_term;
  s.upper = std::min(1.0, s.upper_raw);
  return s;
}

// ---------------------------------------------------------------------------
// Stochastic dominance of empirical score distributions
// ---------------------------------------------------------------------------

struct DominanceReport {
  bool dominated = false;   // noisy ECDF <= clean ECDF + tol everywhere
  double max_violation = 0.0;  // max over t of (F_noisy - F_clean)
  double max_gap = 0.0;        // max over t of (F_clean - F_noisy)
  double tol = 0.0;
};

// Two-sample DKW slack at confidence 1-delta, so finite samples do not flag
// false violations.
inline double dkw_tolerance(std::size_t n1, std::size_t n2, double delta = 0.05) {
  const auto n = static_cast<double>(std::min(n1, n2));
  return 2.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * n));
}

// Evaluates both empirical CDFs on the pooled support. The extremes of the
// difference of two step functions occur at the jump points, so checking
// there is exact.
inline DominanceReport dominance_check(std::vector<double> clean,
                                       std::vector<double> noisy, double tol) {
  if (clean.empty() || noisy.empty()) {
    throw std::domain_error("dominance_check: empty sample");
  }
  std::sort(clean.begin(), clean.end());
  std::sort(noisy.begin(), noisy.end());
  std::vector<double> pooled;
  pooled.reserve(clean.size() + noisy.size());
  pooled.insert(pooled.end(), clean.begin(), clean.end());
  pooled.insert(pooled.end(), noisy.begin(), noisy.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  DominanceReport rep;
  rep.tol = tol;
  const double n1 = static_cast<double>(clean.size());
  const double n2 = static_cast<double>(noisy.size());
  for (double t : pooled) {
    const double fc = static_cast<double>(
                          std::upper_bound(clean.begin(), clean.end(), t) -
                          clean.begin()) / n1;
    const double fn = static_cast<double>(
                          std::upper_bound(noisy.begin(), noisy.end(), t) -
                          noisy.begin()) / n2;
    rep.max_violation = std::max(rep.max_violation, fn - fc);
    rep.max_gap = std::max(rep.max_gap, fc - fn);
  }
  rep.dominated = rep.max_violation <= tol;
  return rep;
}

inline CoverageSandwich sandwich_from_dominance(double alpha, std::size_t n,
                                                double u) {
  if (u < 0.0) throw std::domain_error("sandwich_from_dominance: u < 0");
  return make_sandwich(alpha, n, u);
}

// ---------------------------------------------------------------------------
// Classification channel bounds and condition checks
// ---------------------------------------------------------------------------

inline void check_probability_vector(const std::vector<double>& p,
                                     const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (v < -1e-12) throw std::invalid_argument(std::string(what) + ": negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": entries do not sum to 1");
  }
}

// Half L1 distance between the clean and noisy class marginals.
inline double class_marginal_tv_term(const std::vector<double>& p_clean,
                                     const std::vector<double>& p_noisy) {
  if (p_clean.size() != p_noisy.size()) {
    throw std::invalid_argument("class_marginal_tv_term: size mismatch");
  }
  check_probability_vector(p_clean, "class_marginal_tv_term clean");
  check_probability_vector(p_noisy, "class_marginal_tv_term noisy");
  double l1 = 0.0;
  for (std::size_t i = 0; i < p_clean.size(); ++i) {
    l1 += std::abs(p_clean[i] - p_noisy[i]);
  }
  return 0.5 * l1;
}

inline CoverageSandwich random_flip_sandwich(double alpha, std::size_t n,
                                             double epsilon, int k) {
  if (k < 2) throw std::domain_error("random_flip_sandwich: k must be >= 2");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw std::domain_error("random_flip_sandwich: epsilon outside [0,1)");
  }
  const double noise_term =
      epsilon * (static_cast<double>(k) - 1.0) / static_cast<double>(k);
  return make_sandwich(alpha, n, noise_term);
}

// Corrected target level alpha' = alpha + 2 (n/(n+1)) eps for calibration
// with a TV-bounded channel; infeasible when it reaches 1.
inline double tv_adjusted_alpha(double alpha, std::size_t n, double epsilon) {
  if (epsilon < 0.0) throw std::domain_error("tv_adjusted_alpha: epsilon < 0");
  const double dn = static_cast<double>(n);
  const double adjusted = alpha + 2.0 * (dn / (dn + 1.0)) * epsilon;
  if (adjusted >= 1.0) {
    throw infeasibility_error("tv_adjusted_alpha: adjusted level reaches 1; cannot calibrate");
  }
  return adjusted;
}

inline double tv_coverage_upper(double alpha, std::size_t n, double xi) {
  if (xi < 0.0) throw std::domain_error("tv_coverage_upper: xi < 0");
  const double dn = static_cast<double>(n);
  return std::min(1.0, 1.0 - alpha + 1.0 / (dn + 1.0) + (dn / (dn + 1.0)) * xi);
}

// Prefix-mass condition: order labels by clean signal (descending) and
// require every prefix sum of (clean - noisy) to be nonnegative.
inline bool prefix_mass_check(const std::vector<double>& p_clean,
                              const std::vector<double>& p_noisy,
                              double tol = 1e-12) {
  if (p_clean.size() != p_noisy.size()) {
    throw std::invalid_argument("prefix_mass_check: size mismatch");
  }
  std::vector<std::size_t> order(p_clean.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p_clean[a] > p_clean[b];
  });
  double prefix = 0.0;
  for (std::size_t idx : order) {
    prefix += p_clean[idx] - p_noisy[idx];
    if (prefix < -tol) return false;
  }
  return true;
}

// The pairwise <= orderings of the two vectors agree.
inline bool rank_preservation_check(const std::vector<double>& p_clean,
                                    const std::vector<double>& p_noisy) {
  if (p_clean.size() != p_noisy.size()) {
    throw std::invalid_argument("rank_preservation_check: size mismatch");
  }
  for (std::size_t i = 0; i < p_clean.size(); ++i) {
    for (std::size_t j = 0; j < p_clean.size(); ++j) {
      if ((p_clean[i] <= p_clean[j]) != (p_noisy[i] <= p_noisy[j])) return false;
    }
  }
  return true;
}

// Componentwise |noisy - 1/K| <= |clean - 1/K|.
inline bool towards_uniform_check(const std::vector<double>& p_clean,
                                  const std::vector<double>& p_noisy,
                                  double tol = 1e-12) {
  if (p_clean.size() != p_noisy.size()) {
    throw std::invalid_argument("towards_uniform_check: size mismatch");
  }
  const double inv_k = 1.0 / static_cast<double>(p_clean.size());
  for (std::size_t i = 0; i < p_clean.size(); ++i) {
    if (std::abs(p_noisy[i] - inv_k) > std::abs(p_clean[i] - inv_k) + tol) {
      return false;
    }
  }
  return true;
}

// Per-class necessary-and-sufficient channel condition: the T-mixture of
// noisy conditional score CDFs must dominate the clean conditional CDF.
// `cdfs_*[j][g]` is the class-j CDF evaluated at t_grid[g].
inline std::vector<bool> confusion_condition_check(
    const Matrix& t, const std::vector<std::vector<double>>& cdfs_clean,
    const std::vector<std::vector<double>>& cdfs_noisy,
    const std::vector<double>& t_grid, double tol = 1e-12) {
  validate_row_stochastic(t);
  const std::size_t k = t.size();
  if (cdfs_clean.size() != k || cdfs_noisy.size() != k) {
    throw std::domain_error("confusion_condition_check: class count mismatch");
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (cdfs_clean[j].size() != t_grid.size() ||
        cdfs_noisy[j].size() != t_grid.size()) {
      throw std::domain_error("confusion_condition_check: grid mismatch");
    }
  }
  std::vector<bool> ok(k, true);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t g = 0; g < t_grid.size(); ++g) {
      double mix = 0.0;
      for (std::size_t jp = 0; jp < k; ++jp) mix += t[j][jp] * cdfs_noisy[jp][g];
      if (mix < cdfs_clean[j][g] - tol) {
        ok[j] = false;
        break;
      }
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// Taylor-expansion risk and coverage bounds for additive mean-zero noise
// ---------------------------------------------------------------------------

struct TaylorRiskBounds {
  double lower = 0.0;
  double upper = 0.0;
  double q = 0.0;
  double big_q = 0.0;
  double var_z = 0.0;
};

inline TaylorRiskBounds taylor_risk_bounds(double alpha_noisy, double q,
                                           double big_q, double var_z) {
  if (q > big_q) throw std::domain_error("taylor_risk_bounds: q > Q");
  if (var_z < 0.0) throw std::domain_error("taylor_risk_bounds: Var(Z) < 0");
  TaylorRiskBounds b;
  b.q = q;
  b.big_q = big_q;
  b.var_z = var_z;
  b.lower = alpha_noisy - 0.5 * big_q * var_z;
  b.upper = alpha_noisy - 0.5 * q * var_z;
  return b;
}

// Empirically computable coverage lower bound from the smoothed loss:
// 1 - (noisy smooth risk - mean_q * Var(Z) / 2) / h(d), clipped to [0,1].
// mean_q is the expectation over test intervals of the per-interval minimum
// second derivative.
inline double smooth_coverage_lower_bound(double noisy_smooth_risk,
                                          double mean_q, double var_z,
                                          double d) {
  if (!(d > 0.0)) throw std::domain_error("smooth_coverage_lower_bound: d <= 0");
  if (var_z < 0.0) throw std::domain_error("smooth_coverage_lower_bound: Var(Z) < 0");
  const double bound =
      1.0 - (noisy_smooth_risk - 0.5 * mean_q * var_z) / h_of_d(d);
  return std::clamp(bound, 0.0, 1.0);
}

// Coverage lower bound from a Lipschitz conditional density:
// noisy coverage - E[|C| K_X] * E[|Z|], clipped to [0,1].
inline double lipschitz_coverage_bound(double noisy_coverage,
                                       double mean_len_times_k,
                                       double mean_abs_z) {
  if (noisy_coverage < 0.0 || mean_len_times_k < 0.0 || mean_abs_z < 0.0) {
    throw std::domain_error("lipschitz_coverage_bound: negative input");
  }
  return std::clamp(noisy_coverage - mean_len_times_k * mean_abs_z, 0.0, 1.0);
}

}  // namespace cpnoise
