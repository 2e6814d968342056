#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cpnoise/adversarial.hpp"
#include "cpnoise/calibrate.hpp"

using namespace cpnoise;

TEST_CASE("build A set") {
  auto a = build_A_set({0.5, 0.5}, {0.5, 0.5});
  CHECK(a.labels.empty());

  a = build_A_set({0.8, 0.2}, {0.5, 0.5});
  CHECK(a.labels == std::vector<int>{1});

  // Complement identity: labels outside A have noisy mass <= clean mass.
  std::vector<double> clean{0.1, 0.4, 0.3, 0.2};
  std::vector<double> noisy{0.3, 0.2, 0.3, 0.2};
  a = build_A_set(clean, noisy);
  for (int y = 0; y < 4; ++y) {
    if (!a.contains(y)) CHECK(noisy[y] <= clean[y]);
    else CHECK(noisy[y] > clean[y]);
  }
}

TEST_CASE("adversary indicator score") {
  AdversarySet a{{1, 3}};
  CHECK(adversary_indicator_score(1, a) == 0.0);
  CHECK(adversary_indicator_score(0, a) == 1.0);
  AdversarySet empty;
  CHECK(adversary_indicator_score(5, empty) == 1.0);
}

TEST_CASE("wrong to right") {
  Rng rng(300);
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  // Perfect model: nothing changes.
  auto res = wrong_to_right(labels, labels, 0.5, rng);
  CHECK(res.labels == labels);
  CHECK(res.achieved_rate == 0.0);

  // Budget 0: unchanged even with a wrong model.
  std::vector<int> preds{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  res = wrong_to_right(labels, preds, 0.0, rng);
  CHECK(res.labels == labels);

  // Budget covers 3 of the 8 misclassified points.
  res = wrong_to_right(labels, preds, 0.3, rng);
  CHECK(res.achieved_rate == doctest::Approx(0.3));
  int changed = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (res.labels[i] != labels[i]) {
      ++changed;
      CHECK(res.labels[i] == preds[i]);  // flipped to the model output
      CHECK(labels[i] != preds[i]);      // and only misclassified points move
    }
  }
  CHECK(changed == 3);

  // Shortfall: budget above the misclassification count.
  std::vector<int> nearly_right{1, 1, 1, 0, 1, 1, 1, 1, 1, 1};
  res = wrong_to_right(nearly_right, preds, 0.5, rng);
  CHECK(res.achieved_rate == doctest::Approx(0.1));
  CHECK(res.labels == preds);
}

TEST_CASE("optimal adversarial basics") {
  // Two classes, 5 points; score rows give each point a high and a low score.
  std::vector<std::vector<double>> scores{
      {0.9, 0.1}, {0.8, 0.3}, {0.2, 0.7}, {0.6, 0.4}, {0.5, 0.45}};
  std::vector<int> labels{0, 0, 1, 0, 0};

  auto unchanged = optimal_adversarial(scores, labels, 0.2, 0);
  CHECK(unchanged.labels == labels);
  CHECK(unchanged.swaps == 0);
  CHECK(unchanged.qhat_trajectory.size() == 1);

  auto res = optimal_adversarial(scores, labels, 0.2, 10);
  for (std::size_t i = 1; i < res.qhat_trajectory.size(); ++i) {
    CHECK(res.qhat_trajectory[i] <= res.qhat_trajectory[i - 1] + 1e-12);
  }
}

TEST_CASE("optimal adversarial matches exhaustive search on a 5-point toy") {
  // Oracle: enumerate every label assignment reachable with the same number
  // of swaps and take the minimal conformal quantile.
  const std::vector<std::vector<double>> scores{
      {0.95, 0.30}, {0.70, 0.20}, {0.40, 0.90}, {0.85, 0.15}, {0.55, 0.60}};
  const std::vector<int> start{0, 0, 1, 0, 1};
  const double alpha = 0.25;

  const auto res = optimal_adversarial(scores, start, alpha, 5);

  double brute_best = std::numeric_limits<double>::infinity();
  const std::size_t n = start.size();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::size_t changed = 0;
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int lab = (mask >> i) & 1u;
      if (lab != start[i]) ++changed;
      s[i] = scores[i][static_cast<std::size_t>(lab)];
    }
    if (changed > res.swaps) continue;
    brute_best = std::min(brute_best, conformal_quantile(s, alpha).qhat);
  }
  CHECK(res.qhat_trajectory.back() == doctest::Approx(brute_best));
}

TEST_CASE("most frequent confusion") {
  Rng rng(301);
  std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1};
  Matrix counts{{0, 10, 0}, {8, 0, 1}, {0, 1, 0}};

  auto res = most_frequent_confusion(labels, counts, 0.0, rng);
  CHECK(res.labels == labels);

  // Single dominant pair (0,1): only those labels swap.
  res = most_frequent_confusion(labels, counts, 0.5, rng);
  int changed = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (res.labels[i] != labels[i]) {
      ++changed;
      CHECK(labels[i] != 2);
      CHECK(res.labels[i] == (labels[i] == 0 ? 1 : 0));
    }
  }
  CHECK(changed == 4);
  CHECK(res.achieved_rate == doctest::Approx(0.5));
}

TEST_CASE("indicator-score construction under-covers relative to clean calibration") {
  // Discrete instance with a noisy marginal different from the clean one.
  // Calibrating the adversarial indicator score on noisy labels yields
  // strictly lower clean coverage than calibrating on clean labels.
  // The noise must have sufficient magnitude for the quantile to differ
  // between the two calibrations: P(Y in A) < 1 - alpha < P(Ytilde in A).
  Rng rng(302);
  const std::vector<double> p_clean{0.5, 0.3, 0.2};
  const std::vector<double> p_noisy{0.05, 0.05, 0.9};
  const auto a = build_A_set(p_clean, p_noisy);
  REQUIRE(a.labels == std::vector<int>{2});

  auto draw = [&](const std::vector<double>& p) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      acc += p[j];
      if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(p.size()) - 1;
  };

  const double alpha = 0.3;
  const std::size_t n = 59;
  const int trials = 2000;
  int noisy_covered = 0, clean_covered = 0, total = 0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> s_noisy(n), s_clean(n);
    for (std::size_t i = 0; i < n; ++i) {
      s_noisy[i] = adversary_indicator_score(draw(p_noisy), a);
      s_clean[i] = adversary_indicator_score(draw(p_clean), a);
    }
    const double q_noisy = conformal_quantile(s_noisy, alpha).qhat;
    const double q_clean = conformal_quantile(s_clean, alpha).qhat;
    for (int j = 0; j < 20; ++j) {
      const int y = draw(p_clean);
      const double s = adversary_indicator_score(y, a);
      if (s <= q_noisy) ++noisy_covered;
      if (s <= q_clean) ++clean_covered;
      ++total;
    }
  }
  const double cov_noisy = noisy_covered / static_cast<double>(total);
  const double cov_clean = clean_covered / static_cast<double>(total);
  const double sigma = 0.5 / std::sqrt(static_cast<double>(trials));
  CHECK(cov_clean - cov_noisy > 3.0 * sigma);
}
