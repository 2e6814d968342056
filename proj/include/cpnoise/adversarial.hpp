#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cpnoise/bounds.hpp"
#include "cpnoise/calibrate.hpp"
#include "cpnoise/rng.hpp"

namespace cpnoise {

// Labels whose noisy marginal mass strictly exceeds the clean one; scoring
// its complement breaks coverage for any non-trivially corrupted marginal.
struct AdversarySet {
  std::vector<int> labels;  // sorted ascending

  bool contains(int y) const {
    return std::binary_search(labels.begin(), labels.end(), y);
  }
};

inline AdversarySet build_A_set(const std::vector<double>& p_clean,
                                const std::vector<double>& p_noisy) {
  if (p_clean.size() != p_noisy.size()) {
    throw std::invalid_argument("build_A_set: size mismatch");
  }
  check_probability_vector(p_clean, "build_A_set clean");
  check_probability_vector(p_noisy, "build_A_set noisy");
  AdversarySet a;
  for (std::size_t i = 0; i < p_clean.size(); ++i) {
    if (p_noisy[i] > p_clean[i]) a.labels.push_back(static_cast<int>(i));
  }
  return a;
}

// Indicator score of the complement of A.
inline double adversary_indicator_score(int y, const AdversarySet& a) {
  return a.contains(y) ? 0.0 : 1.0;
}

struct AttackResult {
  std::vector<int> labels;
  double achieved_rate = 0.0;
};

// Replace labels of misclassified calibration points with the model's top
// prediction, up to a budget fraction of all points. When misclassified
// points exceed the budget, the corrupted subset is chosen uniformly at
// random; when they fall short, all of them are changed and the achieved
// rate records the shortfall.
inline AttackResult wrong_to_right(std::vector<int> labels,
                                   const std::vector<int>& model_preds,
                                   double budget_epsilon, Rng& rng) {
  if (labels.size() != model_preds.size()) {
    throw std::invalid_argument("wrong_to_right: length mismatch");
  }
  const std::size_t n = labels.size();
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != model_preds[i]) wrong.push_back(i);
  }
  auto budget = static_cast<std::size_t>(
      std::llround(budget_epsilon * static_cast<double>(n)));
  const std::size_t take = std::min(budget, wrong.size());
  for (std::size_t j = 0; j < take; ++j) {
    const std::size_t pick =
        j + static_cast<std::size_t>(rng.below(wrong.size() - j));
    std::swap(wrong[j], wrong[pick]);
    labels[wrong[j]] = model_preds[wrong[j]];
  }
  AttackResult out;
  out.labels = std::move(labels);
  out.achieved_rate =
      n == 0 ? 0.0 : static_cast<double>(take) / static_cast<double>(n);
  return out;
}

struct OptimalAttackResult {
  std::vector<int> labels;
  std::vector<double> qhat_trajectory;  // nonincreasing, one entry per state
  std::size_t swaps = 0;
};

// Greedy worst-case label noise: repeatedly recompute the conformal
// threshold, and among points scoring above it relabel the one whose best
// alternative label lowers its score the most. Each swap replaces one score
// by a smaller one, so the threshold trajectory is nonincreasing. Ties break
// by lowest sample index for deterministic replays.
inline OptimalAttackResult optimal_adversarial(
    const std::vector<std::vector<double>>& scores_by_label,
    std::vector<int> labels, double alpha, std::size_t max_swaps) {
  const std::size_t n = labels.size();
  if (scores_by_label.size() != n) {
    throw std::invalid_argument("optimal_adversarial: length mismatch");
  }
  OptimalAttackResult out;

  auto current_scores = [&]() {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores_by_label[i][static_cast<std::size_t>(labels[i])];
    }
    return s;
  };

  double qhat = conformal_quantile(current_scores(), alpha).qhat;
  out.qhat_trajectory.push_back(qhat);

  while (out.swaps < max_swaps) {
    std::size_t best_i = n;
    std::size_t best_label = 0;
    double best_reduction = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = scores_by_label[i];
      const double si = row[static_cast<std::size_t>(labels[i])];
      if (!(si > qhat)) continue;
      const std::size_t alt =
          static_cast<std::size_t>(std::min_element(row.begin(), row.end()) -
                                   row.begin());
      const double reduction = si - row[alt];
      if (reduction > best_reduction) {
        best_reduction = reduction;
        best_i = i;
        best_label = alt;
      }
    }
    if (best_i == n) break;  // no above-threshold point can reduce its score
    labels[best_i] = static_cast<int>(best_label);
    ++out.swaps;
    qhat = conformal_quantile(current_scores(), alpha).qhat;
    out.qhat_trajectory.push_back(qhat);
  }

  out.labels = std::move(labels);
  return out;
}

// Swap labels between the most-confused class pairs until the budget is
// met. Pairs are ranked by symmetrized confusion count; within a pair,
// points are corrupted in random order.
inline AttackResult most_frequent_confusion(std::vector<int> labels,
                                            const Matrix& confusion_counts,
                                            double epsilon, Rng& rng) {
  const std::size_t k = confusion_counts.size();
  for (const auto& row : confusion_counts) {
    if (row.size() != k) {
      throw std::invalid_argument("most_frequent_confusion: not square");
    }
  }
  struct Pair {
    std::size_t a, b;
    double mass;
  };
  std::vector<Pair> pairs;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const double mass = confusion_counts[a][b] + confusion_counts[b][a];
      if (mass > 0.0) pairs.push_back({a, b, mass});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& x, const Pair& y) { return x.mass > y.mass; });

  const std::size_t n = labels.size();
  auto budget = static_cast<std::size_t>(
      std::llround(epsilon * static_cast<double>(n)));
  std::size_t changed = 0;
  for (const Pair& pr : pairs) {
    if (changed >= budget) break;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      if (c == pr.a || c == pr.b) members.push_back(i);
    }
    const std::size_t take = std::min(members.size(), budget - changed);
    for (std::size_t j = 0; j < take; ++j) {
      const std::size_t pick =
          j + static_cast<std::size_t>(rng.below(members.size() - j));
      std::swap(members[j], members[pick]);
      const std::size_t i = members[j];
      labels[i] = labels[i] == static_cast<int>(pr.a) ? static_cast<int>(pr.b)
                                                      : static_cast<int>(pr.a);
    }
    changed += take;
  }
  AttackResult out;
  out.labels = std::move(labels);
  out.achieved_rate =
      n == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(n);
  return out;
}

}  // namespace cpnoise
