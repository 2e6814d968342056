#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cpnoise/errors.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/scores.hpp"

namespace cpnoise {

// Rolling risk-control state: a stretch parameter theta updated by
// theta <- theta + gamma * (loss - alpha) after each observation, plus the
// consecutive-miscoverage counters for the clean and noisy label streams.
// Clean labels are carried for evaluation only; the update never reads them.
struct OnlineState {
  double theta = 0.0;
  double gamma = 0.05;
  double alpha = 0.1;
  std::size_t t = 0;
  long mc_clean = 0;
  long mc_noisy = 0;

  void validate() const {
    if (!(gamma > 0.0)) throw config_error("OnlineState: gamma must be positive");
    if (mc_clean < 0 || mc_noisy < 0) {
      throw std::domain_error("OnlineState: negative counter");
    }
  }
};

// Exponential stretching of the interval margin: monotone, zero at zero,
// negative (shrinking) for negative theta.
inline double exp_stretch(double theta) {
  return theta >= 0.0 ? std::exp(theta) - 1.0 : -(std::exp(-theta) - 1.0);
}

inline RealInterval stretch_interval(const IntervalPred& base, double theta) {
  const double margin = exp_stretch(theta);
  RealInterval c{base.lo - margin, base.hi + margin};
  if (c.lo > c.hi) {  // over-shrunk margin: empty set
    c = {std::numeric_limits<double>::infinity(),
         -std::numeric_limits<double>::infinity()};
  }
  return c;
}

// Classification variant: threshold the per-class complement probability at
// the stretched margin, so the set grows with theta.
inline std::vector<int> stretch_class_set(const ClassProbs& p, double theta) {
  const double margin = exp_stretch(theta);
  std::vector<int> set;
  for (std::size_t y = 0; y < p.size(); ++y) {
    if (1.0 - p.probs[y] <= margin) set.push_back(static_cast<int>(y));
  }
  return set;
}

struct OnlineStepRecord {
  double theta_before = 0.0;
  double loss_noisy = 0.0;
  std::optional<double> loss_clean;
  long mc_noisy = 0;
  long mc_clean = 0;
};

// One step of the online loop for an interval prediction with the
// miscoverage loss. Clean losses are recorded when a clean label is
// supplied; the state update uses only the noisy loss.
inline OnlineStepRecord online_step(OnlineState& state, const IntervalPred& base,
                                    double y_noisy,
                                    std::optional<double> y_clean) {
  state.validate();
  OnlineStepRecord rec;
  rec.theta_before = state.theta;
  const RealInterval c = stretch_interval(base, state.theta);
  rec.loss_noisy = miscoverage(y_noisy, c);
  state.mc_noisy = miscoverage_counter(state.mc_noisy, rec.loss_noisy == 0.0);
  if (y_clean) {
    rec.loss_clean = miscoverage(*y_clean, c);
    state.mc_clean = miscoverage_counter(state.mc_clean, *rec.loss_clean == 0.0);
  }
  rec.mc_noisy = state.mc_noisy;
  rec.mc_clean = state.mc_clean;
  state.theta += state.gamma * (rec.loss_noisy - state.alpha);
  ++state.t;
  return rec;
}

inline OnlineStepRecord online_step(OnlineState& state, const ClassProbs& base,
                                    int y_noisy, std::optional<int> y_clean) {
  state.validate();
  OnlineStepRecord rec;
  rec.theta_before = state.theta;
  const std::vector<int> c = stretch_class_set(base, state.theta);
  rec.loss_noisy = miscoverage(y_noisy, c);
  state.mc_noisy = miscoverage_counter(state.mc_noisy, rec.loss_noisy == 0.0);
  if (y_clean) {
    rec.loss_clean = miscoverage(*y_clean, c);
    state.mc_clean = miscoverage_counter(state.mc_clean, *rec.loss_clean == 0.0);
  }
  rec.mc_noisy = state.mc_noisy;
  rec.mc_clean = state.mc_clean;
  state.theta += state.gamma * (rec.loss_noisy - state.alpha);
  ++state.t;
  return rec;
}

// Per-pixel intervals driven by the image miscoverage loss.
inline OnlineStepRecord image_online_step(OnlineState& state,
                                          const IntervalGrid& base,
                                          const Grid& y_noisy,
                                          const Grid& y_clean) {
  state.validate();
  if (base.rows != y_noisy.rows || base.cols != y_noisy.cols ||
      base.rows != y_clean.rows || base.cols != y_clean.cols) {
    throw std::domain_error("image_online_step: shape mismatch");
  }
  const double margin = exp_stretch(state.theta);
  IntervalGrid c(base.rows, base.cols);
  for (std::size_t i = 0; i < base.size(); ++i) {
    c.v[i] = {base.v[i].lo - margin, base.v[i].hi + margin};
    if (c.v[i].lo > c.v[i].hi) c.v[i] = {1.0, -1.0};  // empty
  }
  OnlineStepRecord rec;
  rec.theta_before = state.theta;
  rec.loss_noisy = image_miscoverage(y_noisy, c);
  rec.loss_clean = image_miscoverage(y_clean, c);
  state.mc_noisy = miscoverage_counter(state.mc_noisy, rec.loss_noisy == 0.0);
  state.mc_clean = miscoverage_counter(state.mc_clean, *rec.loss_clean == 0.0);
  rec.mc_noisy = state.mc_noisy;
  rec.mc_clean = state.mc_clean;
  state.theta += state.gamma * (rec.loss_noisy - state.alpha);
  ++state.t;
  return rec;
}

struct OnlineObservation {
  IntervalPred base;
  double y_noisy = 0.0;
  double y_clean = 0.0;
};

struct OnlineReport {
  std::size_t steps = 0;
  double mean_loss_noisy = 0.0;
  double mean_loss_clean = 0.0;
  double mean_mc_noisy = 0.0;
  double mean_mc_clean = 0.0;
  double final_theta = 0.0;
  std::vector<OnlineStepRecord> trace;
};

struct OnlineConfig {
  double alpha = 0.1;
  double gamma = 0.05;
  double theta0 = 0.0;
  bool keep_trace = false;
};

inline OnlineReport run_online(const std::vector<OnlineObservation>& stream,
                               const OnlineConfig& cfg) {
  if (stream.empty()) throw std::domain_error("run_online: empty stream");
  OnlineState state;
  state.theta = cfg.theta0;
  state.gamma = cfg.gamma;
  state.alpha = cfg.alpha;
  OnlineReport rep;
  double sum_noisy = 0.0, sum_clean = 0.0, sum_mc_noisy = 0.0, sum_mc_clean = 0.0;
  for (const auto& obs : stream) {
    const auto rec = online_step(state, obs.base, obs.y_noisy, obs.y_clean);
    sum_noisy += rec.loss_noisy;
    sum_clean += *rec.loss_clean;
    sum_mc_noisy += static_cast<double>(rec.mc_noisy);
    sum_mc_clean += static_cast<double>(rec.mc_clean);
    if (cfg.keep_trace) rep.trace.push_back(rec);
  }
  const auto t = static_cast<double>(stream.size());
  rep.steps = stream.size();
  rep.mean_loss_noisy = sum_noisy / t;
  rep.mean_loss_clean = sum_clean / t;
  rep.mean_mc_noisy = sum_mc_noisy / t;
  rep.mean_mc_clean = sum_mc_clean / t;
  rep.final_theta = state.theta;
  return rep;
}

}  // namespace cpnoise
