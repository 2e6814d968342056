#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpnoise/adversarial.hpp"
#include "cpnoise/bounds.hpp"
#include "cpnoise/calibrate.hpp"
#include "cpnoise/config.hpp"
#include "cpnoise/dataset.hpp"
#include "cpnoise/fnr_sim.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/noise.hpp"
#include "cpnoise/parallel.hpp"
#include "cpnoise/rng.hpp"
#include "cpnoise/scores.hpp"
#include "cpnoise/synth.hpp"

namespace cpnoise {

struct TrialReport {
  std::size_t trial = 0;
  bool failed = false;
  std::string error;
  std::vector<std::string> values;  // aligned with ExperimentResult::columns
};

struct ExperimentResult {
  std::vector<std::string> columns;
  std::vector<TrialReport> rows;
  nlohmann::json summary;
  // Per-sample loss audit (first trial only), empty unless requested.
  std::string sample_losses_csv;
};

namespace detail {

inline std::string fmt(double v) { return csvio::format(v); }
inline std::string fmt_nan() { return "nan"; }

inline int argmax(const ClassProbs& p) {
  return static_cast<int>(
      std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
}

inline std::vector<double> empirical_marginals(const std::vector<int>& labels,
                                               int k) {
  std::vector<double> m(static_cast<std::size_t>(k), 0.0);
  for (int y : labels) m[static_cast<std::size_t>(y)] += 1.0;
  for (double& v : m) v /= static_cast<double>(labels.size());
  return m;
}

inline double disagreement(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) ++diff;
  }
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

// Smooth loss on the margin-expanded interval; an over-shrunk (empty)
// interval takes the loss supremum.
inline double smooth_loss_margin(double y, double lo, double hi, double lambda,
                                 const SmoothLossParams& params) {
  const double a = lo - lambda;
  const double b = hi + lambda;
  if (!(a < b)) return 2.0;
  return smooth_miscoverage_param(y, a, b, params);
}

struct Aggregate {
  double sum = 0.0;
  double sq = 0.0;
  std::vector<double> all;

  void add(double v) {
    sum += v;
    sq += v * v;
    all.push_back(v);
  }
  double mean() const { return all.empty() ? 0.0 : sum / static_cast<double>(all.size()); }
  double sd() const {
    if (all.size() < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sq / static_cast<double>(all.size()) - m * m));
  }
  double quantile(double q) {
    if (all.empty()) return 0.0;
    std::sort(all.begin(), all.end());
    const double idx = q * static_cast<double>(all.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(idx));
    const auto hi = static_cast<std::size_t>(std::ceil(idx));
    return all[lo] + (idx - static_cast<double>(lo)) * (all[hi] - all[lo]);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Classification pipeline
// ---------------------------------------------------------------------------

namespace detail {

// Per-trial materialization of the configured corruption: a sampler for
// labels and, when the channel acts marginally, the exact transition used
// by the oracle model.
struct ClsChannel {
  NoiseKind kind = NoiseKind::none;
  double epsilon = 0.0;
  int k = 0;
  Matrix transition;        // empty unless kind uses an explicit channel
  std::vector<double> marginals;  // scaling marginal for rare-to-frequent

  std::vector<int> corrupt(const std::vector<int>& labels, Rng& rng,
                           double* achieved) const {
    std::vector<int> out = labels;
    switch (kind) {
      case NoiseKind::none:
        break;
      case NoiseKind::flip:
        for (int& y : out) y = apply_flip(y, k, epsilon, rng);
        break;
      case NoiseKind::uniform_flip:
        for (int& y : out) y = apply_uniform_flip(y, k, epsilon, rng);
        break;
      case NoiseKind::confusion:
        for (int& y : out) y = apply_confusion(y, transition, rng);
        break;
      case NoiseKind::rare_to_frequent: {
        auto res = apply_rare_to_frequent(out, marginals, epsilon, rng);
        out = std::move(res.labels);
        break;
      }
      default:
        throw config_error("classification: unsupported noise kind");
    }
    if (achieved) *achieved = disagreement(labels, out);
    return out;
  }

  ClassProbs push(const ClassProbs& clean) const {
    const std::size_t kk = clean.size();
    ClassProbs out;
    out.probs.assign(kk, 0.0);
    switch (kind) {
      case NoiseKind::none:
        return clean;
      case NoiseKind::flip:
        for (std::size_t j = 0; j < kk; ++j) {
          out.probs[j] = (1.0 - epsilon) * clean.probs[j] +
                         epsilon / static_cast<double>(kk);
        }
        return out;
      case NoiseKind::uniform_flip:
        for (std::size_t j = 0; j < kk; ++j) {
          out.probs[j] = (1.0 - epsilon) * clean.probs[j] +
                         epsilon * (1.0 - clean.probs[j]) /
                             (static_cast<double>(kk) - 1.0);
        }
        return out;
      case NoiseKind::confusion:
      case NoiseKind::rare_to_frequent:
        for (std::size_t i = 0; i < kk; ++i) {
          for (std::size_t j = 0; j < kk; ++j) {
            out.probs[j] += clean.probs[i] * transition[i][j];
          }
        }
        return out;
      default:
        throw config_error("classification: oracle has no channel for this noise");
    }
  }
};

inline ClsChannel make_cls_channel(const ExperimentConfig& cfg,
                                   const ClsGenSpec& gspec,
                                   const Dataset& train) {
  ClsChannel ch;
  ch.kind = cfg.noise.kind;
  ch.epsilon = cfg.noise.epsilon;
  ch.k = gspec.k;
  switch (cfg.noise.kind) {
    case NoiseKind::none:
    case NoiseKind::flip:
    case NoiseKind::uniform_flip:
      break;
    case NoiseKind::confusion: {
      if (cfg.noise.transition) {
        ch.transition = *cfg.noise.transition;
      } else {
        // Oracle confusion counts on the training split.
        Matrix counts(static_cast<std::size_t>(gspec.k),
                      std::vector<double>(static_cast<std::size_t>(gspec.k), 0.0));
        for (std::size_t i = 0; i < train.n; ++i) {
          const auto probs = oracle_clean_probs(train.row(i), gspec);
          counts[static_cast<std::size_t>(train.y_class[i])]
                [static_cast<std::size_t>(argmax(probs))] += 1.0;
        }
        ch.transition = build_confusion_from_oracle(
            counts, cfg.noise.epsilon,
            empirical_marginals(train.y_class, gspec.k));
      }
      break;
    }
    case NoiseKind::rare_to_frequent: {
      ch.marginals = empirical_marginals(train.y_class, gspec.k);
      ch.transition = rare_to_frequent_transition(ch.marginals, cfg.noise.epsilon);
      break;
    }
    default:
      throw config_error("classification: unsupported noise kind");
  }
  return ch;
}

inline double class_score(const ClassProbs& p, int y, ScoreKind kind, double u) {
  switch (kind) {
    case ScoreKind::hps: return hps_score(p, static_cast<std::size_t>(y));
    case ScoreKind::aps: return aps_score(p, static_cast<std::size_t>(y), u);
    case ScoreKind::aps_deterministic:
      return aps_score(p, static_cast<std::size_t>(y), 1.0);
    default:
      throw config_error("classification: interval score on a classification task");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

namespace detail {

struct TaskRunner {
  std::vector<std::string> columns;
  // one returned row per alpha level
  std::function<std::vector<std::vector<std::string>>(std::size_t)> run_trial;
};

// Per-sample loss audit sink; only the first trial writes, so no locking.
using LossSink = std::shared_ptr<std::vector<std::string>>;

inline void audit_loss(const LossSink& sink, std::size_t trial, double alpha,
                       std::size_t sample, double loss_clean,
                       double loss_noisy) {
  if (!sink || trial != 0) return;
  sink->push_back(std::to_string(trial) + "," + fmt(alpha) + "," +
                  std::to_string(sample) + "," + fmt(loss_clean) + "," +
                  (std::isnan(loss_noisy) ? fmt_nan() : fmt(loss_noisy)));
}

inline TaskRunner make_classification_runner(const ExperimentConfig& cfg,
                                             LossSink sink = nullptr) {
  TaskRunner runner;
  runner.columns = {"trial",
                    "alpha",
                    "qhat",
                    "coverage_clean",
                    "coverage_noisy",
                    "avg_set_size",
                    "achieved_noise_rate",
                    "warnings"};
  for (const auto& b : cfg.bounds) {
    if (b == "random-flip-sandwich") {
      runner.columns.insert(runner.columns.end(), {"rf_lower", "rf_upper"});
    } else if (b == "marginal-tv") {
      runner.columns.insert(runner.columns.end(), {"tv_term", "tv_upper"});
    } else if (b == "dominance") {
      runner.columns.insert(runner.columns.end(),
                            {"dominance_ok", "dominance_violation", "dominance_u",
                             "dominance_upper"});
    } else {
      throw config_error("unknown bound request: " + b);
    }
  }

  runner.run_trial = [&cfg, sink](std::size_t trial) {
    Rng rng(Rng::derive(cfg.seed, trial));
    ClsGenSpec gspec = with_random_weights(cfg.cls_gen, rng);
    const Dataset train = gen_classification(cfg.n_train, gspec, rng);
    const Dataset cal = gen_classification(cfg.n_cal, gspec, rng);
    const Dataset test = gen_classification(cfg.n_test, gspec, rng);

    const bool adversarial = cfg.noise.kind == NoiseKind::adversarial;
    ClsChannel channel;
    if (!adversarial) channel = make_cls_channel(cfg, gspec, train);

    // Model probabilities for every calibration and test point.
    const bool use_noisy_oracle = cfg.model == ModelKind::oracle && !adversarial;
    auto model_probs = [&](const double* x) {
      const ClassProbs clean = oracle_clean_probs(x, gspec);
      return use_noisy_oracle ? channel.push(clean) : clean;
    };
    std::vector<ClassProbs> cal_probs(cfg.n_cal), test_probs(cfg.n_test);
    for (std::size_t i = 0; i < cfg.n_cal; ++i) cal_probs[i] = model_probs(cal.row(i));
    for (std::size_t i = 0; i < cfg.n_test; ++i) test_probs[i] = model_probs(test.row(i));

    // Randomization draws, fixed per point and reused across alpha levels.
    std::vector<double> cal_u(cfg.n_cal), test_u(cfg.n_test);
    for (double& u : cal_u) u = rng.uniform();
    for (double& u : test_u) u = rng.uniform();

    double achieved = 0.0;
    std::vector<int> cal_noisy, test_noisy;
    std::vector<double> cal_scores(cfg.n_cal), clean_cal_scores(cfg.n_cal);
    AdversarySet adversary_set;
    std::vector<std::vector<double>> score_matrix;  // adversarial:optimal

    if (!adversarial) {
      cal_noisy = channel.corrupt(cal.y_class, rng, &achieved);
      test_noisy = channel.corrupt(test.y_class, rng, nullptr);
      for (std::size_t i = 0; i < cfg.n_cal; ++i) {
        cal_scores[i] = class_score(cal_probs[i], cal_noisy[i], cfg.score, cal_u[i]);
        clean_cal_scores[i] =
            class_score(cal_probs[i], cal.y_class[i], cfg.score, cal_u[i]);
      }
    } else {
      switch (cfg.noise.adversarial) {
        case AdversarialKind::w2r: {
          std::vector<int> preds(cfg.n_cal);
          for (std::size_t i = 0; i < cfg.n_cal; ++i) preds[i] = argmax(cal_probs[i]);
          auto res = wrong_to_right(cal.y_class, preds, cfg.noise.epsilon, rng);
          cal_noisy = std::move(res.labels);
          achieved = res.achieved_rate;
          break;
        }
        case AdversarialKind::mfc: {
          Matrix counts(static_cast<std::size_t>(gspec.k),
                        std::vector<double>(static_cast<std::size_t>(gspec.k), 0.0));
          for (std::size_t i = 0; i < train.n; ++i) {
            const auto probs = oracle_clean_probs(train.row(i), gspec);
            counts[static_cast<std::size_t>(train.y_class[i])]
                  [static_cast<std::size_t>(argmax(probs))] += 1.0;
          }
          auto res =
              most_frequent_confusion(cal.y_class, counts, cfg.noise.epsilon, rng);
          cal_noisy = std::move(res.labels);
          achieved = res.achieved_rate;
          break;
        }
        case AdversarialKind::indicator: {
          // Shift the marginal with the rare-to-frequent channel, then score
          // with the indicator of the adversary set's complement.
          const auto marginals = empirical_marginals(train.y_class, gspec.k);
          const auto t = rare_to_frequent_transition(marginals, cfg.noise.epsilon);
          std::vector<double> noisy_marg(static_cast<std::size_t>(gspec.k), 0.0);
          for (std::size_t i = 0; i < noisy_marg.size(); ++i) {
            for (std::size_t j = 0; j < noisy_marg.size(); ++j) {
              noisy_marg[j] += marginals[i] * t[i][j];
            }
          }
          adversary_set = build_A_set(marginals, noisy_marg);
          auto res = apply_rare_to_frequent(cal.y_class, marginals,
                                            cfg.noise.epsilon, rng);
          cal_noisy = std::move(res.labels);
          achieved = res.achieved_rate;
          break;
        }
        case AdversarialKind::optimal: {
          score_matrix.resize(cfg.n_cal);
          for (std::size_t i = 0; i < cfg.n_cal; ++i) {
            score_matrix[i].resize(static_cast<std::size_t>(gspec.k));
            for (int y = 0; y < gspec.k; ++y) {
              score_matrix[i][static_cast<std::size_t>(y)] =
                  class_score(cal_probs[i], y, cfg.score, cal_u[i]);
            }
            clean_cal_scores[i] =
                score_matrix[i][static_cast<std::size_t>(cal.y_class[i])];
          }
          break;  // attack runs per alpha (it depends on the level)
        }
        default:
          throw config_error("classification: unknown adversarial kind");
      }
      if (cfg.noise.adversarial != AdversarialKind::optimal) {
        if (cfg.noise.adversarial == AdversarialKind::indicator) {
          for (std::size_t i = 0; i < cfg.n_cal; ++i) {
            cal_scores[i] = adversary_indicator_score(cal_noisy[i], adversary_set);
            clean_cal_scores[i] = adversary_indicator_score(cal.y_class[i], adversary_set);
          }
        } else {
          for (std::size_t i = 0; i < cfg.n_cal; ++i) {
            cal_scores[i] =
                class_score(cal_probs[i], cal_noisy[i], cfg.score, cal_u[i]);
            clean_cal_scores[i] =
                class_score(cal_probs[i], cal.y_class[i], cfg.score, cal_u[i]);
          }
        }
      }
    }

    std::vector<std::vector<std::string>> rows;
    for (double alpha : cfg.alphas) {
      std::string warnings;
      double achieved_alpha = achieved;
      std::vector<double> scores = cal_scores;
      if (adversarial && cfg.noise.adversarial == AdversarialKind::optimal) {
        const auto max_swaps = static_cast<std::size_t>(
            std::llround(cfg.noise.epsilon * static_cast<double>(cfg.n_cal)));
        auto res = optimal_adversarial(score_matrix, cal.y_class, alpha, max_swaps);
        achieved_alpha = static_cast<double>(res.swaps) / static_cast<double>(cfg.n_cal);
        for (std::size_t i = 0; i < cfg.n_cal; ++i) {
          scores[i] = score_matrix[i][static_cast<std::size_t>(res.labels[i])];
        }
      }

      const auto thr = conformal_quantile(scores, alpha);
      if (thr.saturated()) warnings += "quantile-saturated;";

      double covered_clean = 0.0, covered_noisy = 0.0, size_sum = 0.0;
      const bool indicator_attack = adversarial && cfg.noise.adversarial == AdversarialKind::indicator;
      for (std::size_t i = 0; i < cfg.n_test; ++i) {
        if (indicator_attack) {
          const bool in = adversary_indicator_score(test.y_class[i], adversary_set) <= thr.qhat;
          covered_clean += in ? 1.0 : 0.0;
          for (int y = 0; y < gspec.k; ++y) {
            if (adversary_indicator_score(y, adversary_set) <= thr.qhat) size_sum += 1.0;
          }
          audit_loss(sink, trial, alpha, i, miscoverage(in),
                     std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        const auto& p = test_probs[i];
        for (int y = 0; y < gspec.k; ++y) {
          if (class_score(p, y, cfg.score, test_u[i]) <= thr.qhat) size_sum += 1.0;
        }
        const bool in_clean =
            class_score(p, test.y_class[i], cfg.score, test_u[i]) <= thr.qhat;
        covered_clean += in_clean ? 1.0 : 0.0;
        double loss_noisy = std::numeric_limits<double>::quiet_NaN();
        if (!adversarial) {
          const bool in_noisy =
              class_score(p, test_noisy[i], cfg.score, test_u[i]) <= thr.qhat;
          covered_noisy += in_noisy ? 1.0 : 0.0;
          loss_noisy = miscoverage(in_noisy);
        }
        audit_loss(sink, trial, alpha, i, miscoverage(in_clean), loss_noisy);
      }
      const double n_test = static_cast<double>(cfg.n_test);

      std::vector<std::string> row{
          std::to_string(0),  // trial filled by caller
          fmt(alpha),
          thr.saturated() ? "inf" : fmt(thr.qhat),
          fmt(covered_clean / n_test),
          adversarial ? fmt_nan() : fmt(covered_noisy / n_test),
          fmt(size_sum / n_test),
          fmt(achieved_alpha),
          warnings.empty() ? "-" : warnings,
      };

      for (const auto& b : cfg.bounds) {
        if (b == "random-flip-sandwich") {
          const auto s = random_flip_sandwich(alpha, cfg.n_cal, cfg.noise.epsilon,
                                              gspec.k);
          row.push_back(fmt(s.lower));
          row.push_back(fmt(s.upper));
        } else if (b == "marginal-tv") {
          if (adversarial) {
            row.push_back(fmt_nan());
            row.push_back(fmt_nan());
          } else {
            const auto p_clean = empirical_marginals(test.y_class, gspec.k);
            const auto p_noisy = empirical_marginals(test_noisy, gspec.k);
            const double tv = class_marginal_tv_term(p_clean, p_noisy);
            row.push_back(fmt(tv));
            row.push_back(fmt(make_sandwich(alpha, cfg.n_cal, tv).upper));
          }
        } else if (b == "dominance") {
          const auto rep =
              dominance_check(clean_cal_scores, scores,
                              dkw_tolerance(cfg.n_cal, cfg.n_cal));
          row.push_back(rep.dominated ? "1" : "0");
          row.push_back(fmt(rep.max_violation));
          row.push_back(fmt(rep.max_gap));
          row.push_back(fmt(sandwich_from_dominance(alpha, cfg.n_cal, rep.max_gap).upper));
        }
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return runner;
}

// ---------------------------------------------------------------------------
// Regression pipeline (split conformal with CQR or residual-magnitude)
// ---------------------------------------------------------------------------

inline std::vector<double> corrupt_regression_batch(const std::vector<double>& y,
                                                    const NoiseSpec& noise,
                                                    Rng& rng) {
  switch (noise.kind) {
    case NoiseKind::none:
      return y;
    case NoiseKind::additive: {
      std::vector<double> out = y;
      for (double& v : out) {
        v = apply_additive(v, noise.additive_dist, noise.additive_c, rng);
      }
      return out;
    }
    case NoiseKind::contractive:
      return apply_contractive(y, rng);
    case NoiseKind::dispersive:
      return apply_dispersive(y, rng);
    default:
      throw config_error("regression: unsupported noise kind");
  }
}

struct RegressionAttackResult {
  std::vector<double> responses;
  double achieved_rate = 0.0;
};

// Regression form of the wrong-to-right attack: points the fitted band
// misses get their response replaced by the band midpoint (the model's own
// best guess), up to a budget fraction of all points; the corrupted subset
// is chosen uniformly at random when misses exceed the budget.
inline RegressionAttackResult wrong_to_right_responses(
    std::vector<double> responses, const std::vector<IntervalPred>& preds,
    double budget_epsilon, Rng& rng) {
  if (responses.size() != preds.size()) {
    throw std::invalid_argument("wrong_to_right_responses: length mismatch");
  }
  const std::size_t n = responses.size();
  std::vector<std::size_t> missed;
  for (std::size_t i = 0; i < n; ++i) {
    if (responses[i] < preds[i].lo || responses[i] > preds[i].hi) {
      missed.push_back(i);
    }
  }
  auto budget = static_cast<std::size_t>(
      std::llround(budget_epsilon * static_cast<double>(n)));
  const std::size_t take = std::min(budget, missed.size());
  for (std::size_t j = 0; j < take; ++j) {
    const std::size_t pick =
        j + static_cast<std::size_t>(rng.below(missed.size() - j));
    std::swap(missed[j], missed[pick]);
    const std::size_t i = missed[j];
    responses[i] = 0.5 * (preds[i].lo + preds[i].hi);
  }
  RegressionAttackResult res;
  res.responses = std::move(responses);
  res.achieved_rate =
      n == 0 ? 0.0 : static_cast<double>(take) / static_cast<double>(n);
  return res;
}

inline TaskRunner make_regression_runner(const ExperimentConfig& cfg,
                                         LossSink sink = nullptr) {
  TaskRunner runner;
  runner.columns = {"trial",
                    "alpha",
                    "qhat",
                    "coverage_clean",
                    "coverage_noisy",
                    "avg_length",
                    "achieved_noise_rate",
                    "warnings"};
  for (const auto& b : cfg.bounds) {
    if (b == "dominance") {
      runner.columns.insert(runner.columns.end(),
                            {"dominance_ok", "dominance_violation", "dominance_u",
                             "dominance_upper"});
    } else {
      throw config_error("unknown bound request for regression: " + b);
    }
  }

  runner.run_trial = [&cfg, sink](std::size_t trial) {
    Rng rng(Rng::derive(cfg.seed, trial));
    const bool adversarial = cfg.noise.kind == NoiseKind::adversarial;
    if (adversarial && cfg.noise.adversarial != AdversarialKind::w2r) {
      throw config_error("regression: only the wrong-to-right attack is defined");
    }

    Dataset train, cal, test;
    if (cfg.use_bimodal) {
      train = gen_bimodal_adversarial(cfg.n_train, cfg.bimodal_gen, rng);
      cal = gen_bimodal_adversarial(cfg.n_cal, cfg.bimodal_gen, rng);
      test = gen_bimodal_adversarial(cfg.n_test, cfg.bimodal_gen, rng);
    } else {
      train = gen_regression(cfg.n_train, cfg.reg_gen, rng);
      cal = gen_regression(cfg.n_cal, cfg.reg_gen, rng);
      test = gen_regression(cfg.n_test, cfg.reg_gen, rng);
    }

    Dataset train_noisy = train;
    std::vector<double> cal_noisy_y, test_noisy_y;
    double achieved = 0.0;
    if (!adversarial) {
      if (cfg.corrupt_train) {
        train_noisy.y_real = corrupt_regression_batch(train.y_real, cfg.noise, rng);
      }
      cal_noisy_y = corrupt_regression_batch(cal.y_real, cfg.noise, rng);
      test_noisy_y = corrupt_regression_batch(test.y_real, cfg.noise, rng);
      std::size_t moved = 0;
      for (std::size_t i = 0; i < cal.n; ++i) {
        if (cal_noisy_y[i] != cal.y_real[i]) ++moved;
      }
      achieved = static_cast<double>(moved) / static_cast<double>(cal.n);
    }

    std::vector<std::vector<std::string>> rows;
    for (double alpha : cfg.alphas) {
      std::string warnings;

      // Fit the band on the (noisy) training split at this level.
      std::vector<IntervalPred> cal_pred(cal.n), test_pred(test.n);
      if (cfg.score == ScoreKind::cqr) {
        const auto lo_fit = fit_linear_quantile(train_noisy, alpha / 2.0,
                                                cfg.quantile_steps,
                                                cfg.quantile_step_size);
        const auto hi_fit = fit_linear_quantile(train_noisy, 1.0 - alpha / 2.0,
                                                cfg.quantile_steps,
                                                cfg.quantile_step_size);
        auto band = [&](const Dataset& ds, std::size_t i) {
          IntervalPred p;
          p.lo = lo_fit.model.predict(ds.row(i));
          p.hi = hi_fit.model.predict(ds.row(i));
          if (p.lo > p.hi) std::swap(p.lo, p.hi);  // crossing quantile fits
          return p;
        };
        for (std::size_t i = 0; i < cal.n; ++i) cal_pred[i] = band(cal, i);
        for (std::size_t i = 0; i < test.n; ++i) test_pred[i] = band(test, i);
      } else if (cfg.score == ScoreKind::rm) {
        const auto mean_fit = fit_linear_mean(train_noisy);
        auto band = [&](const Dataset& ds, std::size_t i) {
          IntervalPred p;
          p.mean = mean_fit.predict(ds.row(i));
          p.scale = 1.0;
          p.lo = *p.mean;
          p.hi = *p.mean;
          return p;
        };
        for (std::size_t i = 0; i < cal.n; ++i) cal_pred[i] = band(cal, i);
        for (std::size_t i = 0; i < test.n; ++i) test_pred[i] = band(test, i);
      } else {
        throw config_error("regression: score must be cqr or rm");
      }

      auto score_of = [&](const IntervalPred& p, double y) {
        return cfg.score == ScoreKind::cqr ? cqr_score(p, y) : rm_score(p, y);
      };

      std::vector<double> y_cal = adversarial ? cal.y_real : cal_noisy_y;
      double achieved_alpha = achieved;
      if (adversarial) {
        auto res = wrong_to_right_responses(y_cal, cal_pred, cfg.noise.epsilon, rng);
        y_cal = std::move(res.responses);
        achieved_alpha = res.achieved_rate;
      }

      std::vector<double> cal_scores(cal.n), clean_cal_scores(cal.n);
      for (std::size_t i = 0; i < cal.n; ++i) {
        cal_scores[i] = score_of(cal_pred[i], y_cal[i]);
        clean_cal_scores[i] = score_of(cal_pred[i], cal.y_real[i]);
      }
      const auto thr = conformal_quantile(cal_scores, alpha);
      if (thr.saturated()) warnings += "quantile-saturated;";

      double covered_clean = 0.0, covered_noisy = 0.0, length_sum = 0.0;
      for (std::size_t i = 0; i < test.n; ++i) {
        const auto interval = build_interval(test_pred[i], thr, cfg.score);
        const bool in_clean = interval.contains(test.y_real[i]);
        covered_clean += in_clean ? 1.0 : 0.0;
        double loss_noisy = std::numeric_limits<double>::quiet_NaN();
        if (!adversarial) {
          const bool in_noisy = interval.contains(test_noisy_y[i]);
          covered_noisy += in_noisy ? 1.0 : 0.0;
          loss_noisy = miscoverage(in_noisy);
        }
        length_sum += interval.length();
        audit_loss(sink, trial, alpha, i, miscoverage(in_clean), loss_noisy);
      }
      const double n_test = static_cast<double>(test.n);

      std::vector<std::string> row{
          std::to_string(0),
          fmt(alpha),
          thr.saturated() ? "inf" : fmt(thr.qhat),
          fmt(covered_clean / n_test),
          adversarial ? fmt_nan() : fmt(covered_noisy / n_test),
          fmt(length_sum / n_test),
          fmt(achieved_alpha),
          warnings.empty() ? "-" : warnings,
      };
      for (const auto& b : cfg.bounds) {
        if (b == "dominance") {
          const auto rep = dominance_check(clean_cal_scores, cal_scores,
                                           dkw_tolerance(cal.n, cal.n));
          row.push_back(rep.dominated ? "1" : "0");
          row.push_back(fmt(rep.max_violation));
          row.push_back(fmt(rep.max_gap));
          row.push_back(fmt(sandwich_from_dominance(alpha, cal.n, rep.max_gap).upper));
        }
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return runner;
}

// ---------------------------------------------------------------------------
// Conformal risk control of the smoothed miscoverage on the bimodal world
// ---------------------------------------------------------------------------

inline TaskRunner make_crc_smooth_runner(const ExperimentConfig& cfg,
                                         LossSink sink = nullptr) {
  TaskRunner runner;
  runner.columns = {
      "trial",        "alpha",          "lambda",       "coverage_clean",
      "coverage_noisy", "smooth_clean", "smooth_noisy", "delta_mean",
      "delta_se",     "q_mean",         "Q_mean",       "var_z",
      "taylor_lower", "taylor_upper",   "cov_bound",    "cov_bound_c",
      "cov_bound_d",  "mean_width",     "warnings"};

  runner.run_trial = [&cfg, sink](std::size_t trial) {
    if (cfg.noise.kind != NoiseKind::additive) {
      throw config_error("crc-smooth: additive noise required");
    }
    Rng rng(Rng::derive(cfg.seed, trial));
    Dataset train = gen_bimodal_adversarial(cfg.n_train, cfg.bimodal_gen, rng);
    Dataset cal = gen_bimodal_adversarial(cfg.n_cal, cfg.bimodal_gen, rng);
    Dataset test = gen_bimodal_adversarial(cfg.n_test, cfg.bimodal_gen, rng);

    Dataset train_noisy = train;
    if (cfg.corrupt_train) {
      train_noisy.y_real = corrupt_regression_batch(train.y_real, cfg.noise, rng);
    }
    const auto cal_noisy_y = corrupt_regression_batch(cal.y_real, cfg.noise, rng);
    const auto test_noisy_y = corrupt_regression_batch(test.y_real, cfg.noise, rng);
    const double var_z = cfg.noise.additive_dist == AdditiveDist::gauss
                             ? cfg.noise.additive_c * cfg.noise.additive_c
                             : std::numeric_limits<double>::quiet_NaN();

    // Base band: fixed quantile levels of the noisy labels.
    const auto lo_fit =
        fit_linear_quantile(train_noisy, cfg.base_quantiles[0],
                            cfg.quantile_steps, cfg.quantile_step_size);
    const auto hi_fit =
        fit_linear_quantile(train_noisy, cfg.base_quantiles[1],
                            cfg.quantile_steps, cfg.quantile_step_size);
    auto band = [&](const Dataset& ds, std::size_t i) {
      IntervalPred p;
      p.lo = lo_fit.model.predict(ds.row(i));
      p.hi = hi_fit.model.predict(ds.row(i));
      if (p.lo > p.hi) std::swap(p.lo, p.hi);
      return p;
    };
    std::vector<IntervalPred> cal_pred(cal.n), test_pred(test.n);
    for (std::size_t i = 0; i < cal.n; ++i) cal_pred[i] = band(cal, i);
    for (std::size_t i = 0; i < test.n; ++i) test_pred[i] = band(test, i);

    // Risk curve of the base smooth loss over the margin grid.
    const SmoothLossParams base_params{1.0, 1.0};
    std::vector<double> grid(cfg.lambda_grid.points);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      grid[g] = cfg.lambda_grid.lo +
                (cfg.lambda_grid.hi - cfg.lambda_grid.lo) *
                    static_cast<double>(g) /
                    static_cast<double>(cfg.lambda_grid.points - 1);
    }
    std::vector<double> curve(grid.size(), 0.0);
    for (std::size_t i = 0; i < cal.n; ++i) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        curve[g] += smooth_loss_margin(cal_noisy_y[i], cal_pred[i].lo,
                                       cal_pred[i].hi, grid[g], base_params);
      }
    }
    for (double& v : curve) v /= static_cast<double>(cal.n);

    // (c, d) grid for the coverage bound, searched on the calibration split.
    const std::vector<double> c_grid{0.5, 1.0, 2.0};
    const std::vector<double> d_grid{0.5, 1.0, 2.0, 4.0};

    std::vector<std::vector<std::string>> rows;
    for (double alpha : cfg.alphas) {
      std::string warnings;
      const auto thr = crc_threshold(grid, curve, alpha, 2.0, cal.n);
      if (thr.envelope_applied) warnings += "crc-envelope;";
      const double lambda = thr.lambda;

      auto interval_of = [&](const IntervalPred& p) {
        RealInterval iv{p.lo - lambda, p.hi + lambda};
        if (iv.lo > iv.hi) iv = {0.5 * (p.lo + p.hi), 0.5 * (p.lo + p.hi)};
        return iv;
      };

      // Test-split measurements.
      double cov_clean = 0.0, cov_noisy = 0.0, width_sum = 0.0;
      double smooth_clean = 0.0, smooth_noisy = 0.0;
      double delta_sum = 0.0, delta_sq = 0.0;
      double inv_w2_sum = 0.0;
      for (std::size_t i = 0; i < test.n; ++i) {
        const auto iv = interval_of(test_pred[i]);
        const double lc = smooth_loss_margin(test.y_real[i], test_pred[i].lo,
                                             test_pred[i].hi, lambda, base_params);
        const double ln = smooth_loss_margin(test_noisy_y[i], test_pred[i].lo,
                                             test_pred[i].hi, lambda, base_params);
        smooth_clean += lc;
        smooth_noisy += ln;
        audit_loss(sink, trial, alpha, i, lc, ln);
        const double delta = ln - lc;
        delta_sum += delta;
        delta_sq += delta * delta;
        cov_clean += iv.contains(test.y_real[i]) ? 1.0 : 0.0;
        cov_noisy += iv.contains(test_noisy_y[i]) ? 1.0 : 0.0;
        width_sum += iv.length();
        const double w = std::max(iv.length(), 1e-9);
        inv_w2_sum += 1.0 / (w * w);
      }
      const double n_test = static_cast<double>(test.n);
      smooth_clean /= n_test;
      smooth_noisy /= n_test;
      cov_clean /= n_test;
      cov_noisy /= n_test;
      const double delta_mean = delta_sum / n_test;
      const double delta_var =
          std::max(0.0, delta_sq / n_test - delta_mean * delta_mean);
      const double delta_se = std::sqrt(delta_var / n_test);

      // Second-derivative extrema scale as 1/width^2, so one unit-interval
      // sweep per parameter set serves every test interval.
      const auto base_ext = second_derivative_extrema(0.0, 1.0, base_params);
      const double q_mean = base_ext.min_dd * inv_w2_sum / n_test;
      const double big_q_mean = base_ext.max_dd * inv_w2_sum / n_test;
      const auto taylor = taylor_risk_bounds(smooth_noisy, q_mean, big_q_mean, var_z);

      // Coverage lower bound with (c, d) tuned on the calibration split.
      double best_bound_cal = -1.0;
      SmoothLossParams best_params = base_params;
      for (double c : c_grid) {
        for (double d : d_grid) {
          const SmoothLossParams params{c, d};
          const auto ext = second_derivative_extrema(0.0, 1.0, params);
          double risk = 0.0, inv_w2 = 0.0;
          for (std::size_t i = 0; i < cal.n; ++i) {
            risk += smooth_loss_margin(cal_noisy_y[i], cal_pred[i].lo,
                                       cal_pred[i].hi, lambda, params);
            const auto iv = interval_of(cal_pred[i]);
            const double w = std::max(iv.length(), 1e-9);
            inv_w2 += 1.0 / (w * w);
          }
          risk /= static_cast<double>(cal.n);
          const double mq = ext.min_dd * inv_w2 / static_cast<double>(cal.n);
          const double bound = smooth_coverage_lower_bound(risk, mq, var_z, d);
          if (bound > best_bound_cal) {
            best_bound_cal = bound;
            best_params = params;
          }
        }
      }
      // Report the bound evaluated on the test split with the tuned (c, d).
      const auto best_ext = second_derivative_extrema(0.0, 1.0, best_params);
      double test_risk = 0.0;
      for (std::size_t i = 0; i < test.n; ++i) {
        test_risk += smooth_loss_margin(test_noisy_y[i], test_pred[i].lo,
                                        test_pred[i].hi, lambda, best_params);
      }
      test_risk /= n_test;
      const double mq_test = best_ext.min_dd * inv_w2_sum / n_test;
      const double cov_bound =
          smooth_coverage_lower_bound(test_risk, mq_test, var_z, best_params.d);

      rows.push_back({std::to_string(0), fmt(alpha), fmt(lambda), fmt(cov_clean),
                      fmt(cov_noisy), fmt(smooth_clean), fmt(smooth_noisy),
                      fmt(delta_mean), fmt(delta_se), fmt(q_mean), fmt(big_q_mean),
                      fmt(var_z), fmt(taylor.lower), fmt(taylor.upper),
                      fmt(cov_bound), fmt(best_params.c), fmt(best_params.d),
                      fmt(width_sum / n_test),
                      warnings.empty() ? "-" : warnings});
    }
    return rows;
  };
  return runner;
}

// ---------------------------------------------------------------------------
// Multi-label / segmentation FNR verification
// ---------------------------------------------------------------------------

inline MultiLabelScenario scenario_from_config(const ExperimentConfig& cfg) {
  const auto& m = cfg.multi_label;
  if (m.preset == "deterministic-count") {
    return deterministic_count_scenario(m.labels, m.contexts, m.rate);
  }
  if (m.preset == "independent-rates") {
    return independent_rates_scenario(m.labels, m.contexts, m.rate);
  }
  if (m.preset == "violating") {
    return violating_scenario(m.rate, m.labels);
  }
  throw config_error("multi-label: unknown preset " + m.preset);
}

inline TaskRunner make_fnr_runner(const ExperimentConfig& cfg) {
  TaskRunner runner;
  runner.columns = {"trial", "alpha", "fnr_clean", "fnr_noisy", "feasible"};
  // Scenario is shared and immutable across trials.
  auto scenario = std::make_shared<MultiLabelScenario>(scenario_from_config(cfg));
  const bool require = cfg.multi_label.preset != "violating";

  runner.run_trial = [&cfg, scenario, require](std::size_t trial) {
    Rng rng(Rng::derive(cfg.seed, trial));
    // One-trial transfer run; rows per alpha.
    Rng seeded(rng.next_u64());
    const auto table = simulate_fnr_transfer(
        *scenario, cfg.alphas, 1, cfg.multi_label.n_cal, cfg.multi_label.n_test,
        seeded, require, cfg.lambda_grid.points);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : table) {
      rows.push_back({std::to_string(0), fmt(r.alpha),
                      r.feasible ? fmt(r.clean_fnr_mean) : fmt_nan(),
                      r.feasible ? fmt(r.noisy_fnr_mean) : fmt_nan(),
                      r.feasible ? "1" : "0"});
    }
    return rows;
  };
  return runner;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  detail::LossSink sink;
  if (!cfg.out_losses.empty()) {
    sink = std::make_shared<std::vector<std::string>>();
  }
  detail::TaskRunner runner;
  switch (cfg.task) {
    case TaskConfigKind::classification:
      runner = detail::make_classification_runner(cfg, sink);
      break;
    case TaskConfigKind::regression:
      runner = detail::make_regression_runner(cfg, sink);
      break;
    case TaskConfigKind::regression_crc_smooth:
      runner = detail::make_crc_smooth_runner(cfg, sink);
      break;
    case TaskConfigKind::multi_label:
    case TaskConfigKind::segmentation:
      runner = detail::make_fnr_runner(cfg);
      break;
  }

  ExperimentResult result;
  result.columns = runner.columns;
  result.columns.push_back("error");

  std::vector<std::vector<TrialReport>> per_trial(cfg.trials);
  parallel_for(cfg.trials, cfg.jobs, [&](std::size_t t) {
    std::vector<TrialReport> reports;
    try {
      const auto rows = runner.run_trial(t);
      for (auto row : rows) {
        TrialReport rep;
        rep.trial = t;
        row[0] = std::to_string(t);
        row.push_back("-");  // error column
        rep.values = std::move(row);
        reports.push_back(std::move(rep));
      }
    } catch (const std::exception& e) {
      TrialReport rep;
      rep.trial = t;
      rep.failed = true;
      rep.error = e.what();
      rep.values.assign(runner.columns.size() + 1, "nan");
      rep.values[0] = std::to_string(t);
      rep.values.back() = std::string("\"") + e.what() + "\"";
      reports.push_back(std::move(rep));
    }
    per_trial[t] = std::move(reports);
  });

  std::size_t failed = 0;
  for (auto& reports : per_trial) {
    for (auto& rep : reports) {
      if (rep.failed) ++failed;
      result.rows.push_back(std::move(rep));
    }
  }
  if (failed * 10 > cfg.trials) {
    throw std::runtime_error("run aborted: more than 10% of trials failed (" +
                             std::to_string(failed) + "/" +
                             std::to_string(cfg.trials) + ")");
  }

  // Aggregate numeric columns per alpha level.
  nlohmann::json summary;
  summary["trials"] = cfg.trials;
  summary["failed_trials"] = failed;
  summary["columns"] = result.columns;
  if (cfg.use_bimodal) {
    summary["metadata"]["bimodal_generator"] =
        "stand-in two-component location mixture (under-specified source)";
  }
  const std::size_t alpha_col = 1;
  nlohmann::json per_alpha = nlohmann::json::array();
  for (double alpha : cfg.alphas) {
    const std::string alpha_str = detail::fmt(alpha);
    nlohmann::json stats;
    stats["alpha"] = alpha;
    for (std::size_t c = 0; c < result.columns.size(); ++c) {
      const auto& name = result.columns[c];
      if (name == "trial" || name == "alpha" || name == "warnings" ||
          name == "error") {
        continue;
      }
      detail::Aggregate agg;
      for (const auto& row : result.rows) {
        if (row.failed || row.values[alpha_col] != alpha_str) continue;
        try {
          const double v = std::stod(row.values[c]);
          if (std::isfinite(v)) agg.add(v);
        } catch (...) {
          continue;
        }
      }
      if (agg.all.empty()) continue;
      // Medians alongside means: for heavy-tailed runs (the biased |t1|
      // noise has no mean) the median columns are the stable summary.
      stats["stats"][name] = {{"mean", agg.mean()},
                              {"sd", agg.sd()},
                              {"q25", agg.quantile(0.25)},
                              {"median", agg.quantile(0.5)},
                              {"q75", agg.quantile(0.75)},
                              {"n", agg.all.size()}};
    }
    // Built-in sanity oracle: whatever the noise model, coverage of the
    // noisy test labels must obey the exchangeable guarantee
    // [1 - alpha, 1 - alpha + 1/(n+1)] up to Monte-Carlo error.
    if (stats.contains("stats") && stats["stats"].contains("coverage_noisy") &&
        cfg.task != TaskConfigKind::regression_crc_smooth) {
      const double mean = stats["stats"]["coverage_noisy"]["mean"].get<double>();
      const double sd = stats["stats"]["coverage_noisy"]["sd"].get<double>();
      const auto n_rows = stats["stats"]["coverage_noisy"]["n"].get<std::size_t>();
      const double se = n_rows > 0 ? sd / std::sqrt(static_cast<double>(n_rows)) : 0.0;
      const double lo = 1.0 - alpha;
      const double hi = 1.0 - alpha + 1.0 / (static_cast<double>(cfg.n_cal) + 1.0);
      stats["noisy_coverage_sanity"] = {
          {"lower", lo},
          {"upper", hi},
          {"ok", mean >= lo - 3.0 * se && mean <= hi + 3.0 * se}};
    }
    per_alpha.push_back(stats);
  }
  summary["per_alpha"] = per_alpha;
  result.summary = std::move(summary);

  if (sink) {
    std::string audit = "trial,alpha,sample,loss_clean,loss_noisy\n";
    for (const auto& line : *sink) {
      audit += line;
      audit += "\n";
    }
    result.sample_losses_csv = std::move(audit);
  }
  return result;
}

inline void emit_csv(const ExperimentResult& result, std::ostream& os) {
  for (std::size_t c = 0; c < result.columns.size(); ++c) {
    os << result.columns[c] << (c + 1 < result.columns.size() ? "," : "\n");
  }
  for (const auto& row : result.rows) {
    for (std::size_t c = 0; c < row.values.size(); ++c) {
      os << row.values[c] << (c + 1 < row.values.size() ? "," : "\n");
    }
  }
}

inline void emit_csv(const ExperimentResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  emit_csv(result, f);
}

inline void emit_json(const ExperimentResult& result, std::ostream& os) {
  os << result.summary.dump(2) << "\n";
}

inline void emit_json(const ExperimentResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  emit_json(result, f);
}

inline std::string csv_to_string(const ExperimentResult& result) {
  std::ostringstream ss;
  emit_csv(result, ss);
  return ss.str();
}

}  // namespace cpnoise
