#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpnoise/calibrate.hpp"
#include "cpnoise/errors.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/noise.hpp"
#include "cpnoise/rng.hpp"

namespace cpnoise {

// Simulation-based verification of the FNR transfer results for multi-label
// and segmentation responses. Scenarios are small discrete-context worlds
// where the noisy conditional probabilities are known exactly, so the
// "contains the most likely labels" sets can be built from the oracle
// ranking and the risk transfer checked against fresh clean labels.

enum class FnrPreset {
  // Y is a deterministic function of the context and the corruption swaps
  // one positive with one negative label, keeping |Ytilde| constant.
  deterministic_constant_count,
  // Clean labels are independent Bernoullis per label; every label flips
  // independently with one shared rate.
  independent_equal_rates,
  // Anything else (used by the counterexample probe).
  custom,
};

struct MultiLabelScenario {
  FnrPreset preset = FnrPreset::custom;
  std::size_t num_labels = 0;
  std::size_t num_contexts = 0;

  // independent presets / custom: P(Y_k = 1 | context).
  std::vector<std::vector<double>> clean_probs;
  // per-label flip rates (vector-flip epsilon_k), per context shared.
  std::vector<double> flip_rates;

  // deterministic preset: the fixed positive set per context plus the
  // probability of one positive<->negative swap event.
  std::vector<BinaryMask> positives;
  double swap_rate = 0.0;

  // P(Ytilde_k = 1 | context c) under the scenario's corruption.
  std::vector<double> noisy_probs(std::size_t c) const {
    std::vector<double> out(num_labels, 0.0);
    if (preset == FnrPreset::deterministic_constant_count) {
      const auto& pos = positives[c];
      const double m = static_cast<double>(
          std::count(pos.begin(), pos.end(), std::uint8_t{1}));
      const double neg = static_cast<double>(num_labels) - m;
      for (std::size_t k = 0; k < num_labels; ++k) {
        const double beta = pos[k] ? swap_rate / m : swap_rate / neg;
        out[k] = pos[k] ? 1.0 - beta : beta;
      }
    } else {
      for (std::size_t k = 0; k < num_labels; ++k) {
        const double p = clean_probs[c][k];
        const double beta = flip_rates[k];
        out[k] = p * (1.0 - beta) + (1.0 - p) * beta;
      }
    }
    return out;
  }

  BinaryMask sample_clean(std::size_t c, Rng& rng) const {
    BinaryMask y(num_labels, 0);
    if (preset == FnrPreset::deterministic_constant_count) {
      y = positives[c];
    } else {
      for (std::size_t k = 0; k < num_labels; ++k) {
        y[k] = rng.bernoulli(clean_probs[c][k]) ? 1 : 0;
      }
    }
    return y;
  }

  // The corruption itself is context-free; the context argument keeps the
  // call sites uniform with context-dependent scenarios.
  BinaryMask corrupt([[maybe_unused]] std::size_t c, const BinaryMask& y,
                     Rng& rng) const {
    BinaryMask out = y;
    if (preset == FnrPreset::deterministic_constant_count) {
      if (rng.bernoulli(swap_rate)) {
        std::vector<std::size_t> pos, neg;
        for (std::size_t k = 0; k < num_labels; ++k) {
          (y[k] ? pos : neg).push_back(k);
        }
        if (!pos.empty() && !neg.empty()) {
          out[pos[rng.below(pos.size())]] = 0;
          out[neg[rng.below(neg.size())]] = 1;
        }
      }
    } else {
      for (std::size_t k = 0; k < num_labels; ++k) {
        if (rng.bernoulli(flip_rates[k])) out[k] ^= 1;
      }
    }
    return out;
  }

  void validate() const {
    if (num_labels < 2 || num_contexts < 1) {
      throw config_error("MultiLabelScenario: need >= 2 labels and a context");
    }
    if (preset == FnrPreset::deterministic_constant_count) {
      if (positives.size() != num_contexts) {
        throw config_error("MultiLabelScenario: positives per context required");
      }
      for (const auto& pos : positives) {
        const auto m = static_cast<std::size_t>(
            std::count(pos.begin(), pos.end(), std::uint8_t{1}));
        if (pos.size() != num_labels || m == 0 || m == num_labels) {
          throw config_error(
              "MultiLabelScenario: each context needs a nonempty proper positive set");
        }
      }
      if (!(swap_rate >= 0.0 && swap_rate <= 1.0)) {
        throw config_error("MultiLabelScenario: swap rate outside [0,1]");
      }
    } else {
      if (clean_probs.size() != num_contexts || flip_rates.size() != num_labels) {
        throw config_error("MultiLabelScenario: probability tables missing");
      }
      for (const auto& row : clean_probs) {
        if (row.size() != num_labels) {
          throw config_error("MultiLabelScenario: ragged clean probability table");
        }
        double any = 0.0;
        for (double p : row) {
          if (!(p >= 0.0 && p <= 1.0)) {
            throw config_error("MultiLabelScenario: probability outside [0,1]");
          }
          any += p;
        }
        if (any == 0.0) {
          throw config_error("MultiLabelScenario: a context has no possible positive label");
        }
      }
      for (double b : flip_rates) {
        if (!(b >= 0.0 && b <= 1.0)) {
          throw config_error("MultiLabelScenario: flip rate outside [0,1]");
        }
      }
    }
  }

  // Whether the scenario meets the assumptions of its proposition preset
  // (all effective per-label flip rates below 1/2; equal rates for the
  // independent preset).
  bool satisfies_theory_assumptions() const {
    if (preset == FnrPreset::deterministic_constant_count) {
      for (std::size_t c = 0; c < num_contexts; ++c) {
        const auto& pos = positives[c];
        const double m = static_cast<double>(
            std::count(pos.begin(), pos.end(), std::uint8_t{1}));
        const double neg = static_cast<double>(num_labels) - m;
        if (swap_rate / m >= 0.5 || swap_rate / neg >= 0.5) return false;
      }
      return true;
    }
    for (double b : flip_rates) {
      if (b >= 0.5) return false;
    }
    if (preset == FnrPreset::independent_equal_rates) {
      for (double b : flip_rates) {
        if (b != flip_rates[0]) return false;
      }
    }
    return true;
  }
};

// Default preset mirroring the multi-label setting: deterministic Y per
// context, constant noisy positive count via swap corruption.
inline MultiLabelScenario deterministic_count_scenario(std::size_t num_labels = 12,
                                         std::size_t num_contexts = 3,
                                         double swap_rate = 0.3) {
  MultiLabelScenario s;
  s.preset = FnrPreset::deterministic_constant_count;
  s.num_labels = num_labels;
  s.num_contexts = num_contexts;
  s.swap_rate = swap_rate;
  for (std::size_t c = 0; c < num_contexts; ++c) {
    BinaryMask pos(num_labels, 0);
    const std::size_t m = 3 + 2 * c;
    for (std::size_t j = 0; j < m && j < num_labels - 1; ++j) {
      pos[(j + 5 * c) % num_labels] = 1;
    }
    s.positives.push_back(pos);
  }
  s.validate();
  return s;
}

// Default preset mirroring the segmentation setting: independent per-label
// Bernoulli clean labels, one shared flip rate. A high-probability anchor
// label keeps empty positive sets negligible.
inline MultiLabelScenario independent_rates_scenario(std::size_t num_labels = 16,
                                         std::size_t num_contexts = 3,
                                         double beta = 0.2,
                                         std::uint64_t seed = 9001) {
  MultiLabelScenario s;
  s.preset = FnrPreset::independent_equal_rates;
  s.num_labels = num_labels;
  s.num_contexts = num_contexts;
  s.flip_rates.assign(num_labels, beta);
  Rng rng(seed);
  for (std::size_t c = 0; c < num_contexts; ++c) {
    std::vector<double> row(num_labels);
    for (double& p : row) p = rng.uniform(0.25, 0.9);
    row[0] = 0.95;
    s.clean_probs.push_back(row);
  }
  s.validate();
  return s;
}

// Prop-5 scenario with one label's flip rate pushed past 1/2, deliberately
// breaking the non-adversarial-noise assumption.
inline MultiLabelScenario violating_scenario(double hot_rate = 0.9,
                                             std::size_t num_labels = 16,
                                             std::uint64_t seed = 9001) {
  MultiLabelScenario s = independent_rates_scenario(num_labels, 3, 0.05, seed);
  s.preset = FnrPreset::custom;
  s.flip_rates[0] = hot_rate;  // the anchor label is the most likely one
  return s;
}

// FNR extended to empty positive sets (no positives -> nothing missed), so
// rare all-zero noisy draws in the independent presets stay well-defined.
inline double fnr_or_zero(const BinaryMask& y, const BinaryMask& c) {
  for (std::uint8_t b : y) {
    if (b) return fnr(y, c);
  }
  return 0.0;
}

struct FnrTransferRow {
  double alpha = 0.0;
  bool feasible = true;
  double noisy_fnr_mean = 0.0;
  double noisy_fnr_se = 0.0;
  double clean_fnr_mean = 0.0;
  double clean_fnr_se = 0.0;
  std::size_t trials = 0;
};

namespace detail {

// Mean FNR over the calibration draw as a function of lambda, evaluated on
// an ascending grid. Each positive label enters the set once lambda crosses
// 1 - score, so the per-sample curve is a step function swept in one pass.
inline std::vector<double> fnr_risk_curve(
    const std::vector<std::vector<double>>& scores,
    const std::vector<BinaryMask>& noisy_labels,
    const std::vector<double>& grid) {
  const std::size_t n = noisy_labels.size();
  std::vector<double> curve(grid.size(), 0.0);
  std::vector<double> entry;  // lambda at which each positive label is caught
  for (std::size_t i = 0; i < n; ++i) {
    entry.clear();
    for (std::size_t k = 0; k < noisy_labels[i].size(); ++k) {
      if (noisy_labels[i][k]) entry.push_back(1.0 - scores[i][k]);
    }
    if (entry.empty()) continue;  // FNR taken as zero everywhere
    std::sort(entry.begin(), entry.end());
    const double inv_m = 1.0 / static_cast<double>(entry.size());
    std::size_t caught = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      while (caught < entry.size() && entry[caught] <= grid[g]) ++caught;
      curve[g] += 1.0 - inv_m * static_cast<double>(caught);
    }
  }
  for (double& v : curve) v /= static_cast<double>(n);
  return curve;
}

}  // namespace detail

// Calibrates FNR control on noisy labels at each alpha and evaluates the
// clean and noisy FNR on fresh draws; one row per alpha with Monte-Carlo
// standard errors across trials.
inline std::vector<FnrTransferRow> simulate_fnr_transfer(
    const MultiLabelScenario& scenario, const std::vector<double>& alpha_grid,
    std::size_t trials, std::size_t n_cal, std::size_t n_test, Rng& rng,
    bool require_assumptions = true, std::size_t grid_points = 1001) {
  scenario.validate();
  if (require_assumptions && !scenario.satisfies_theory_assumptions()) {
    throw config_error("simulate_fnr_transfer: scenario violates the preset assumptions");
  }
  if (trials == 0 || n_cal == 0 || n_test == 0) {
    throw config_error("simulate_fnr_transfer: empty run");
  }

  const auto grid = default_lambda_grid(0.0, 1.0, grid_points);
  std::vector<std::vector<double>> ctx_scores(scenario.num_contexts);
  for (std::size_t c = 0; c < scenario.num_contexts; ++c) {
    ctx_scores[c] = scenario.noisy_probs(c);
  }

  const std::size_t n_alpha = alpha_grid.size();
  std::vector<double> clean_sum(n_alpha, 0.0), clean_sq(n_alpha, 0.0);
  std::vector<double> noisy_sum(n_alpha, 0.0), noisy_sq(n_alpha, 0.0);
  std::vector<std::size_t> feasible(n_alpha, 0);

  const std::uint64_t root = rng.next_u64();
  for (std::size_t t = 0; t < trials; ++t) {
    Rng trial_rng(Rng::derive(root, t));

    std::vector<std::vector<double>> cal_scores(n_cal);
    std::vector<BinaryMask> cal_noisy(n_cal);
    for (std::size_t i = 0; i < n_cal; ++i) {
      const std::size_t c = trial_rng.below(scenario.num_contexts);
      const BinaryMask y = scenario.sample_clean(c, trial_rng);
      cal_noisy[i] = scenario.corrupt(c, y, trial_rng);
      cal_scores[i] = ctx_scores[c];
    }
    const auto curve = detail::fnr_risk_curve(cal_scores, cal_noisy, grid);

    // Fresh evaluation draw, shared across alpha levels within the trial.
    std::vector<std::size_t> test_ctx(n_test);
    std::vector<BinaryMask> test_clean(n_test), test_noisy(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      test_ctx[i] = trial_rng.below(scenario.num_contexts);
      test_clean[i] = scenario.sample_clean(test_ctx[i], trial_rng);
      test_noisy[i] = scenario.corrupt(test_ctx[i], test_clean[i], trial_rng);
    }

    for (std::size_t a = 0; a < n_alpha; ++a) {
      double lambda;
      try {
        lambda = crc_threshold(grid, curve, alpha_grid[a], 1.0, n_cal).lambda;
      } catch (const infeasibility_error&) {
        continue;
      }
      double clean_fnr = 0.0, noisy_fnr = 0.0;
      for (std::size_t i = 0; i < n_test; ++i) {
        const auto set = fnr_set_from_lambda(ctx_scores[test_ctx[i]], lambda);
        clean_fnr += fnr_or_zero(test_clean[i], set);
        noisy_fnr += fnr_or_zero(test_noisy[i], set);
      }
      clean_fnr /= static_cast<double>(n_test);
      noisy_fnr /= static_cast<double>(n_test);
      clean_sum[a] += clean_fnr;
      clean_sq[a] += clean_fnr * clean_fnr;
      noisy_sum[a] += noisy_fnr;
      noisy_sq[a] += noisy_fnr * noisy_fnr;
      ++feasible[a];
    }
  }

  std::vector<FnrTransferRow> rows(n_alpha);
  for (std::size_t a = 0; a < n_alpha; ++a) {
    auto& row = rows[a];
    row.alpha = alpha_grid[a];
    row.trials = feasible[a];
    row.feasible = feasible[a] > 0;
    if (!row.feasible) continue;
    const double m = static_cast<double>(feasible[a]);
    row.noisy_fnr_mean = noisy_sum[a] / m;
    row.clean_fnr_mean = clean_sum[a] / m;
    const double var_noisy =
        std::max(0.0, noisy_sq[a] / m - row.noisy_fnr_mean * row.noisy_fnr_mean);
    const double var_clean =
        std::max(0.0, clean_sq[a] / m - row.clean_fnr_mean * row.clean_fnr_mean);
    row.noisy_fnr_se = std::sqrt(var_noisy / m);
    row.clean_fnr_se = std::sqrt(var_clean / m);
  }
  return rows;
}

struct CounterexampleReport {
  double alpha = 0.0;
  double clean_fnr_mean = 0.0;
  double noisy_fnr_mean = 0.0;
  double gap_se = 0.0;     // standard error of (clean - noisy) across trials
  bool violation = false;  // clean FNR exceeds noisy FNR beyond 3 SE
};

// Negative control: runs the transfer simulation on a scenario that breaks
// one proposition assumption and reports whether the clean FNR exceeds the
// noisy FNR, demonstrating that the assumption is necessary.
inline CounterexampleReport counterexample_probe(
    const MultiLabelScenario& scenario, double alpha, std::size_t trials,
    Rng& rng, std::size_t n_cal = 100, std::size_t n_test = 50) {
  scenario.validate();
  if (scenario.satisfies_theory_assumptions()) {
    throw config_error("counterexample_probe: scenario does not violate any assumption");
  }
  const auto rows = simulate_fnr_transfer(scenario, {alpha}, trials, n_cal,
                                          n_test, rng,
                                          /*require_assumptions=*/false);
  CounterexampleReport rep;
  rep.alpha = alpha;
  rep.clean_fnr_mean = rows[0].clean_fnr_mean;
  rep.noisy_fnr_mean = rows[0].noisy_fnr_mean;
  rep.gap_se = std::sqrt(rows[0].clean_fnr_se * rows[0].clean_fnr_se +
                         rows[0].noisy_fnr_se * rows[0].noisy_fnr_se);
  rep.violation =
      rep.clean_fnr_mean > rep.noisy_fnr_mean + 3.0 * rep.gap_se;
  return rep;
}

}  // namespace cpnoise
