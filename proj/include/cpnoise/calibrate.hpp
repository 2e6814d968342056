#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpnoise/errors.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/scores.hpp"

namespace cpnoise {

// Split-conformal threshold: the ceil((n+1)(1-alpha))-smallest calibration
// score, or +inf when that rank exceeds n.
struct ConformalThreshold {
  double qhat = 0.0;
  double alpha = 0.0;
  std::size_t n = 0;

  bool saturated() const { return std::isinf(qhat); }
};

inline ConformalThreshold conformal_quantile(std::vector<double> scores,
                                             double alpha) {
  if (scores.empty()) throw std::domain_error("conformal_quantile: no scores");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::domain_error("conformal_quantile: alpha outside (0,1)");
  }
  for (double s : scores) {
    if (std::isnan(s)) {
      throw std::invalid_argument("conformal_quantile: NaN score");
    }
  }
  const std::size_t n = scores.size();
  const auto rank = static_cast<std::size_t>(
      std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha)));
  ConformalThreshold thr;
  thr.alpha = alpha;
  thr.n = n;
  if (rank > n) {
    thr.qhat = std::numeric_limits<double>::infinity();
    return thr;
  }
  std::nth_element(scores.begin(), scores.begin() + (rank - 1), scores.end());
  thr.qhat = scores[rank - 1];
  return thr;
}

// All labels whose score is at most qhat. For APS the same randomization
// draw u is reused across candidate labels of one test point.
inline std::vector<int> build_set_classification(const ClassProbs& p,
                                                 const ConformalThreshold& thr,
                                                 ScoreKind kind,
                                                 double u = 1.0) {
  std::vector<int> set;
  set.reserve(p.size());
  for (std::size_t y = 0; y < p.size(); ++y) {
    double s = 0.0;
    switch (kind) {
      case ScoreKind::hps: s = hps_score(p, y); break;
      case ScoreKind::aps: s = aps_score(p, y, u); break;
      case ScoreKind::aps_deterministic: s = aps_score(p, y, 1.0); break;
      default:
        throw config_error("build_set_classification: not a classification score");
    }
    if (s <= thr.qhat) set.push_back(static_cast<int>(y));
  }
  return set;
}

inline RealInterval build_interval(const IntervalPred& pred,
                                   const ConformalThreshold& thr,
                                   ScoreKind kind) {
  if (thr.saturated()) {
    return {-std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
  }
  switch (kind) {
    case ScoreKind::cqr:
      return {pred.lo - thr.qhat, pred.hi + thr.qhat};
    case ScoreKind::rm: {
      if (!pred.mean) throw config_error("build_interval: rm needs a mean");
      const double scale = pred.scale.value_or(1.0);
      return {*pred.mean - thr.qhat * scale, *pred.mean + thr.qhat * scale};
    }
    default:
      throw config_error("build_interval: not an interval score");
  }
}

// Conformal risk control threshold: smallest grid lambda whose adjusted
// empirical risk (n*R(lambda) + B) / (n+1) is at most alpha.
struct RiskThreshold {
  double lambda = 0.0;
  double alpha = 0.0;
  double loss_bound = 0.0;  // B
  std::size_t n = 0;
  bool envelope_applied = false;  // non-monotone curve was repaired
  double min_adjusted_risk = 0.0;
};

inline RiskThreshold crc_threshold(const std::vector<double>& lambda_grid,
                                   const std::vector<double>& mean_loss,
                                   double alpha, double loss_bound,
                                   std::size_t n) {
  if (lambda_grid.empty() || lambda_grid.size() != mean_loss.size()) {
    throw std::domain_error("crc_threshold: bad grid");
  }
  if (n == 0) throw std::domain_error("crc_threshold: n must be positive");
  if (!(alpha > 0.0)) throw std::domain_error("crc_threshold: alpha <= 0");
  if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end())) {
    throw std::domain_error("crc_threshold: grid not ascending");
  }

  // Empirical curves at tiny n can wiggle upward; repair with a running
  // minimum so the threshold search stays well-defined, and flag it.
  std::vector<double> risk = mean_loss;
  bool repaired = false;
  for (std::size_t i = 1; i < risk.size(); ++i) {
    if (risk[i] > risk[i - 1] + 1e-12) repaired = true;
    risk[i] = std::min(risk[i], risk[i - 1]);
  }

  RiskThreshold out;
  out.alpha = alpha;
  out.loss_bound = loss_bound;
  out.n = n;
  out.envelope_applied = repaired;

  const double dn = static_cast<double>(n);
  double min_adj = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < risk.size(); ++i) {
    if (mean_loss[i] > loss_bound + 1e-12) {
      throw std::domain_error("crc_threshold: loss exceeds stated bound B");
    }
    const double adjusted = (dn * risk[i] + loss_bound) / (dn + 1.0);
    min_adj = std::min(min_adj, adjusted);
    if (adjusted <= alpha) {
      out.lambda = lambda_grid[i];
      out.min_adjusted_risk = adjusted;
      return out;
    }
  }
  throw infeasibility_error(
      "crc_threshold: no feasible lambda; min adjusted risk " +
      std::to_string(min_adj));
}

// Superlevel set of per-label scores: {k : score_k >= 1 - lambda}. Grows
// with lambda and always consists of the top-ranked labels.
inline BinaryMask fnr_set_from_lambda(std::span<const double> label_scores,
                                      double lambda) {
  BinaryMask set(label_scores.size(), 0);
  for (std::size_t k = 0; k < label_scores.size(); ++k) {
    if (label_scores[k] >= 1.0 - lambda) set[k] = 1;
  }
  return set;
}

inline double empirical_coverage(const std::vector<std::vector<int>>& sets,
                                 const std::vector<int>& labels) {
  if (sets.size() != labels.size()) {
    throw std::domain_error("empirical_coverage: length mismatch");
  }
  if (sets.empty()) throw std::domain_error("empirical_coverage: empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (std::binary_search(sets[i].begin(), sets[i].end(), labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

inline double empirical_coverage(const std::vector<RealInterval>& intervals,
                                 const std::vector<double>& labels) {
  if (intervals.size() != labels.size()) {
    throw std::domain_error("empirical_coverage: length mismatch");
  }
  if (intervals.empty()) throw std::domain_error("empirical_coverage: empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    if (intervals[i].contains(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

// Default candidate grid for risk-control thresholds.
inline std::vector<double> default_lambda_grid(double lo = 0.0, double hi = 1.0,
                                               std::size_t points = 1001) {
  if (points < 2) throw std::domain_error("default_lambda_grid: too few points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = lo + (hi - lo) * static_cast<double>(i) /
                       static_cast<double>(points - 1);
  }
  return grid;
}

}  // namespace cpnoise
