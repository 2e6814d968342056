#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpnoise/errors.hpp"

namespace cpnoise {

// Estimated per-class probabilities pi_hat(x); must form a distribution.
struct ClassProbs {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  void validate(double tol = 1e-9) const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0 + tol)) {
        throw std::invalid_argument("ClassProbs: entry outside [0,1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument("ClassProbs: entries do not sum to 1");
    }
  }
};

// Interval-shaped model output: quantile band [lo, hi] plus optional
// center/scale for the residual-magnitude score.
struct IntervalPred {
  double lo = 0.0;
  double hi = 0.0;
  std::optional<double> mean;
  std::optional<double> scale;

  void validate() const {
    if (!(lo <= hi)) throw std::invalid_argument("IntervalPred: lo > hi");
    if (scale && !(*scale > 0.0)) {
      throw std::invalid_argument("IntervalPred: scale must be positive");
    }
  }
};

enum class ScoreKind { hps, aps, aps_deterministic, cqr, rm };

inline ScoreKind parse_score_kind(const std::string& s) {
  if (s == "hps") return ScoreKind::hps;
  if (s == "aps") return ScoreKind::aps;
  if (s == "aps-deterministic") return ScoreKind::aps_deterministic;
  if (s == "cqr") return ScoreKind::cqr;
  if (s == "rm") return ScoreKind::rm;
  throw config_error("unknown score kind: " + s);
}

inline std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::hps: return "hps";
    case ScoreKind::aps: return "aps";
    case ScoreKind::aps_deterministic: return "aps-deterministic";
    case ScoreKind::cqr: return "cqr";
    case ScoreKind::rm: return "rm";
  }
  return "?";
}

inline double hps_score(const ClassProbs& p, std::size_t y) {
  if (y >= p.size()) throw std::out_of_range("hps_score: class index");
  return 1.0 - p.probs[y];
}

// Mass of classes ranked strictly above y, plus a u-share of y's own mass.
// Equal-probability classes are excluded from the strictly-greater sum, so
// tied classes receive identical scores. u = 1 gives the deterministic
// variant. The randomization draw is supplied by the caller; the score
// itself is pure.
inline double aps_score(const ClassProbs& p, std::size_t y, double u) {
  if (y >= p.size()) throw std::out_of_range("aps_score: class index");
  if (!(u >= 0.0 && u <= 1.0)) {
    throw std::invalid_argument("aps_score: u outside [0,1]");
  }
  const double py = p.probs[y];
  double above = 0.0;
  for (double q : p.probs) {
    if (q > py) above += q;
  }
  return above + py * u;
}

// Signed distance outside the quantile band; negative strictly inside.
inline double cqr_score(const IntervalPred& pred, double y) {
  if (!(pred.lo <= pred.hi)) {
    throw std::invalid_argument("cqr_score: lo > hi");
  }
  return std::max(pred.lo - y, y - pred.hi);
}

inline double rm_score(const IntervalPred& pred, double y) {
  if (!pred.mean) throw config_error("rm_score: prediction has no mean");
  const double scale = pred.scale.value_or(1.0);
  if (!(scale > 0.0)) throw config_error("rm_score: scale must be positive");
  return std::abs(*pred.mean - y) / scale;
}

}  // namespace cpnoise
