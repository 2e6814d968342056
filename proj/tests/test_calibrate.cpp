#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "cpnoise/calibrate.hpp"
#include "cpnoise/rng.hpp"

using namespace cpnoise;

TEST_CASE("conformal quantile definition") {
  CHECK(conformal_quantile({1, 2, 3, 4}, 0.5).qhat == doctest::Approx(3.0));
  CHECK(conformal_quantile({1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.1).qhat ==
        doctest::Approx(9.0));
  const auto saturated = conformal_quantile({1, 2, 3}, 0.1);
  CHECK(saturated.saturated());
  CHECK(std::isinf(saturated.qhat));
  CHECK_THROWS_AS(conformal_quantile({}, 0.5), std::domain_error);
  CHECK_THROWS_AS(conformal_quantile({1.0, std::nan("")}, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(conformal_quantile({1.0}, 0.0), std::domain_error);
}

TEST_CASE("conformal quantile order-statistic oracle on random samples") {
  // Independent oracle: full sort, pick ceil((n+1)(1-alpha))-th smallest.
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.normal();
    const double alpha = rng.uniform(0.01, 0.99);
    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha)));
    const auto thr = conformal_quantile(scores, alpha);
    if (rank > n) {
      CHECK(thr.saturated());
    } else {
      CHECK(thr.qhat == doctest::Approx(sorted[rank - 1]));
    }
  }
}

TEST_CASE("quantile saturation monotonicity: raising a score never lowers qhat") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.normal();
    const double alpha = rng.uniform(0.05, 0.5);
    const double before = conformal_quantile(scores, alpha).qhat;
    scores[rng.below(n)] += rng.uniform(0.0, 3.0);
    const double after = conformal_quantile(scores, alpha).qhat;
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("build classification set") {
  ConformalThreshold inf_thr{std::numeric_limits<double>::infinity(), 0.1, 3};
  ClassProbs p{{0.7, 0.2, 0.1}};
  CHECK(build_set_classification(p, inf_thr, ScoreKind::hps) ==
        std::vector<int>{0, 1, 2});

  ConformalThreshold hps_thr{0.5, 0.1, 10};
  CHECK(build_set_classification(p, hps_thr, ScoreKind::hps) ==
        std::vector<int>{0});

  ClassProbs p2{{0.5, 0.3, 0.2}};
  ConformalThreshold aps_thr{0.8, 0.1, 10};
  CHECK(build_set_classification(p2, aps_thr, ScoreKind::aps, 1.0) ==
        std::vector<int>{0, 1});
  CHECK(build_set_classification(p2, aps_thr, ScoreKind::aps_deterministic) ==
        std::vector<int>{0, 1});
}

TEST_CASE("hps sets with order-preserving probabilities are superlevel sets") {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    ClassProbs p;
    double sum = 0.0;
    const std::size_t k = 3 + rng.below(7);
    for (std::size_t j = 0; j < k; ++j) {
      p.probs.push_back(rng.uniform_pos());
      sum += p.probs.back();
    }
    for (double& v : p.probs) v /= sum;
    ConformalThreshold thr{rng.uniform(), 0.1, 20};
    const auto set = build_set_classification(p, thr, ScoreKind::hps);
    // Every member has probability >= every non-member's probability.
    double min_in = 2.0, max_out = -1.0;
    for (std::size_t j = 0; j < k; ++j) {
      const bool in = std::binary_search(set.begin(), set.end(), static_cast<int>(j));
      if (in) min_in = std::min(min_in, p.probs[j]);
      else max_out = std::max(max_out, p.probs[j]);
    }
    if (!set.empty() && set.size() < k) CHECK(min_in >= max_out);
  }
}

TEST_CASE("build interval") {
  ConformalThreshold thr{0.0, 0.1, 10};
  IntervalPred pred{1.0, 3.0, {}, {}};
  auto c = build_interval(pred, thr, ScoreKind::cqr);
  CHECK(c.lo == doctest::Approx(1.0));
  CHECK(c.hi == doctest::Approx(3.0));

  thr.qhat = 0.5;
  c = build_interval(pred, thr, ScoreKind::cqr);
  CHECK(c.lo == doctest::Approx(0.5));
  CHECK(c.hi == doctest::Approx(3.5));

  ConformalThreshold rm_thr{1.5, 0.1, 10};
  IntervalPred rm_pred{0.0, 0.0, 2.0, 2.0};
  c = build_interval(rm_pred, rm_thr, ScoreKind::rm);
  CHECK(c.lo == doctest::Approx(-1.0));
  CHECK(c.hi == doctest::Approx(5.0));

  ConformalThreshold inf_thr{std::numeric_limits<double>::infinity(), 0.1, 3};
  c = build_interval(pred, inf_thr, ScoreKind::cqr);
  CHECK(std::isinf(c.lo));
  CHECK(std::isinf(c.hi));
  CHECK(c.contains(1e18));
}

TEST_CASE("crc threshold") {
  // R == 0 -> smallest grid lambda (n large enough that B/(n+1) <= alpha).
  auto thr = crc_threshold({0.0, 0.5, 1.0}, {0.0, 0.0, 0.0}, 0.1, 1.0, 20);
  CHECK(thr.lambda == doctest::Approx(0.0));

  // Brute-forced two-candidate example: n=3, B=1, R(0)=1, R(1)=0, alpha=0.5.
  // (3*1+1)/4 = 1 > 0.5 at lambda=0; (3*0+1)/4 = 0.25 <= 0.5 at lambda=1.
  thr = crc_threshold({0.0, 1.0}, {1.0, 0.0}, 0.5, 1.0, 3);
  CHECK(thr.lambda == doctest::Approx(1.0));

  // alpha >= B: every lambda feasible, so the smallest is chosen.
  thr = crc_threshold({0.2, 0.7}, {1.0, 0.5}, 1.5, 1.0, 4);
  CHECK(thr.lambda == doctest::Approx(0.2));

  CHECK_THROWS_AS(crc_threshold({0.0, 1.0}, {1.0, 1.0}, 0.1, 1.0, 3),
                  infeasibility_error);
  CHECK_THROWS_AS(crc_threshold({0.0, 1.0}, {2.0, 0.0}, 0.5, 1.0, 3),
                  std::domain_error);  // loss above B
}

TEST_CASE("crc threshold repairs non-monotone curves") {
  const auto thr =
      crc_threshold({0.0, 0.25, 0.5, 0.75, 1.0}, {0.9, 0.2, 0.35, 0.1, 0.0},
                    0.3, 1.0, 20);
  CHECK(thr.envelope_applied);
  // Envelope: 0.9, 0.2, 0.2, 0.1, 0.0 -> adjusted (20*0.2+1)/21 = 0.238 <= 0.3.
  CHECK(thr.lambda == doctest::Approx(0.25));
}

TEST_CASE("crc threshold is nonincreasing in alpha") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto grid = default_lambda_grid(0.0, 1.0, 21);
    std::vector<double> risk(grid.size());
    double level = rng.uniform(0.5, 1.0);
    for (auto& r : risk) {
      r = level;
      level = std::max(0.0, level - rng.uniform(0.0, 0.2));
    }
    double prev_lambda = 2.0;
    for (double alpha : {0.2, 0.3, 0.5, 0.8}) {
      double lam;
      try {
        lam = crc_threshold(grid, risk, alpha, 1.0, 30).lambda;
      } catch (const infeasibility_error&) {
        continue;
      }
      CHECK(lam <= prev_lambda + 1e-12);
      prev_lambda = lam;
    }
  }
}

TEST_CASE("fnr set from lambda") {
  std::vector<double> scores{0.9, 0.5, 0.1, 1.0};
  auto s0 = fnr_set_from_lambda(scores, 0.0);
  CHECK(s0 == BinaryMask{0, 0, 0, 1});  // only scores >= 1
  auto s1 = fnr_set_from_lambda(scores, 1.0);
  CHECK(s1 == BinaryMask{1, 1, 1, 1});

  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> sc(8);
    for (double& v : sc) v = rng.uniform();
    const double l1 = rng.uniform(0.0, 1.0);
    const double l2 = std::min(1.0, l1 + rng.uniform(0.0, 0.5));
    const auto a = fnr_set_from_lambda(sc, l1);
    const auto b = fnr_set_from_lambda(sc, l2);
    for (std::size_t i = 0; i < sc.size(); ++i) {
      if (a[i]) CHECK(b[i]);  // monotone growth
    }
  }
}

TEST_CASE("empirical coverage") {
  std::vector<std::vector<int>> sets{{0, 1}, {2}, {0}};
  CHECK(empirical_coverage(sets, {0, 2, 0}) == doctest::Approx(1.0));
  CHECK(empirical_coverage(sets, {2, 0, 1}) == doctest::Approx(0.0));
  CHECK(empirical_coverage(sets, {1, 0, 0}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(empirical_coverage(sets, std::vector<int>{0}), std::domain_error);
}

TEST_CASE("exchangeable coverage of the conformal quantile") {
  // Clean i.i.d. scores: mean coverage over many trials must lie in
  // [1-alpha, 1-alpha+1/(n+1)] within 3 binomial sigma.
  Rng rng(12345);
  const double alpha = 0.1;
  const std::size_t n = 49;
  const int trials = 2000;
  const int tests_per_trial = 20;
  double covered = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.normal();
    const auto thr = conformal_quantile(scores, alpha);
    for (int j = 0; j < tests_per_trial; ++j) {
      if (rng.normal() <= thr.qhat) covered += 1.0;
    }
  }
  const double rate = covered / (trials * tests_per_trial);
  // Tests within a trial share the threshold, so use the conservative
  // per-trial sigma.
  const double sigma = 0.5 / std::sqrt(static_cast<double>(trials));
  const double lo = 1.0 - alpha;
  const double hi = 1.0 - alpha + 1.0 / (static_cast<double>(n) + 1.0);
  CHECK(rate >= lo - 3.0 * sigma);
  CHECK(rate <= hi + 3.0 * sigma);
}
