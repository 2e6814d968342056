#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cpnoise/bounds.hpp"
#include "cpnoise/calibrate.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/rng.hpp"

using namespace cpnoise;

TEST_CASE("dominance check") {
  std::vector<double> clean{1, 2, 3, 4, 5};
  auto rep = dominance_check(clean, clean, 0.0);
  CHECK(rep.dominated);
  CHECK(rep.max_violation == doctest::Approx(0.0));

  std::vector<double> shifted_up{2, 3, 4, 5, 6};
  rep = dominance_check(clean, shifted_up, 0.0);
  CHECK(rep.dominated);

  std::vector<double> shifted_down{0, 1, 2, 3, 4};
  rep = dominance_check(clean, shifted_down, 0.0);
  CHECK_FALSE(rep.dominated);
  // At any interior pooled point the noisy ECDF leads by one atom.
  CHECK(rep.max_violation >= 0.2 - 1e-12);
}

TEST_CASE("dkw tolerance shrinks with n") {
  CHECK(dkw_tolerance(100, 100) > dkw_tolerance(10000, 10000));
  CHECK(dkw_tolerance(100, 1000000) == doctest::Approx(dkw_tolerance(100, 100)));
  // 2 sqrt(ln(2/0.05) / (2 * 100))
  CHECK(dkw_tolerance(100, 100) ==
        doctest::Approx(2.0 * std::sqrt(std::log(40.0) / 200.0)));
}

TEST_CASE("sandwich from dominance") {
  auto s = sandwich_from_dominance(0.1, 99, 0.05);
  CHECK(s.lower == doctest::Approx(0.9));
  CHECK(s.upper == doctest::Approx(0.96));

  // u = 0, huge n: collapses to (1 - alpha, 1 - alpha).
  auto tight = sandwich_from_dominance(0.1, 100000000, 0.0);
  CHECK(tight.upper == doctest::Approx(0.9).epsilon(1e-6));

  // u = 1 clips at 1.
  auto clipped = sandwich_from_dominance(0.1, 99, 1.0);
  CHECK(clipped.upper == doctest::Approx(1.0));
  CHECK(clipped.upper_raw > 1.0);
}

TEST_CASE("class marginal tv term") {
  CHECK(class_marginal_tv_term({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(0.0));
  CHECK(class_marginal_tv_term({0.8, 0.2}, {0.5, 0.5}) == doctest::Approx(0.3));
  CHECK(class_marginal_tv_term({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(class_marginal_tv_term({0.5, 0.2}, {0.5, 0.5}),
                  std::invalid_argument);
}

TEST_CASE("random flip sandwich") {
  auto s = random_flip_sandwich(0.1, 99, 0.05, 10);
  CHECK(s.upper == doctest::Approx(0.955));
  CHECK(s.noise_term == doctest::Approx(0.045));

  auto no_noise = random_flip_sandwich(0.1, 99, 0.0, 10);
  CHECK(no_noise.upper == doctest::Approx(0.91));

  auto two = random_flip_sandwich(0.1, 99, 0.2, 2);
  CHECK(two.noise_term == doctest::Approx(0.1));
}

TEST_CASE("tv corrections") {
  CHECK(tv_adjusted_alpha(0.1, 99, 0.0) == doctest::Approx(0.1));
  CHECK(tv_adjusted_alpha(0.1, 99, 0.02) == doctest::Approx(0.1396));
  CHECK_THROWS_AS(tv_adjusted_alpha(0.1, 99, 0.5), infeasibility_error);

  CHECK(tv_coverage_upper(0.1, 99, 0.0) == doctest::Approx(0.91));
  CHECK(tv_coverage_upper(0.1, 99, 0.05) == doctest::Approx(0.9595));
  CHECK(tv_coverage_upper(0.1, 99, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("prefix mass check") {
  CHECK(prefix_mass_check({0.5, 0.5}, {0.5, 0.5}));
  CHECK(prefix_mass_check({0.8, 0.2}, {0.6, 0.4}));
  CHECK_FALSE(prefix_mass_check({0.8, 0.2}, {0.9, 0.1}));
}

TEST_CASE("rank preservation check") {
  CHECK(rank_preservation_check({0.5, 0.3, 0.2}, {0.5, 0.3, 0.2}));
  CHECK_FALSE(rank_preservation_check({0.5, 0.3, 0.2}, {0.3, 0.5, 0.2}));
}

TEST_CASE("flip channel preserves rank order for any eps < 1") {
  Rng rng(199);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(9);
    std::vector<double> p(k);
    double sum = 0.0;
    for (double& v : p) {
      v = rng.uniform_pos();
      sum += v;
    }
    for (double& v : p) v /= sum;
    const double eps = rng.uniform(0.0, 0.999);
    std::vector<double> noisy(k);
    for (std::size_t j = 0; j < k; ++j) {
      noisy[j] = (1.0 - eps) * p[j] + eps / static_cast<double>(k);
    }
    CHECK(rank_preservation_check(p, noisy));
  }
}

TEST_CASE("uniform-flip channel preserves rank order below eps = (K-1)/K") {
  // The noisy mass is affine in the clean mass with slope
  // (1-eps) - eps/(K-1), positive exactly when eps < (K-1)/K. Past that
  // point the channel inverts the ranking, so preservation genuinely fails.
  Rng rng(200);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(9);
    std::vector<double> p(k);
    double sum = 0.0;
    for (double& v : p) {
      v = rng.uniform_pos();
      sum += v;
    }
    for (double& v : p) v /= sum;
    const double cutoff = (static_cast<double>(k) - 1.0) / static_cast<double>(k);
    const double eps = rng.uniform(0.0, cutoff * 0.999);
    std::vector<double> noisy(k);
    for (std::size_t j = 0; j < k; ++j) {
      noisy[j] = (1.0 - eps) * p[j] +
                 eps * (1.0 - p[j]) / (static_cast<double>(k) - 1.0);
    }
    CHECK(rank_preservation_check(p, noisy));
  }

  // Above the cutoff the order flips (distinct clean masses).
  std::vector<double> p{0.7, 0.3};
  const double eps = 0.9;  // cutoff is 1/2 for K = 2
  std::vector<double> noisy{(1.0 - eps) * 0.7 + eps * 0.3,
                            (1.0 - eps) * 0.3 + eps * 0.7};
  CHECK_FALSE(rank_preservation_check(p, noisy));
}

TEST_CASE("towards uniform check") {
  const std::size_t k = 4;
  std::vector<double> clean{0.4, 0.3, 0.2, 0.1};
  std::vector<double> uniform(k, 0.25);
  CHECK(towards_uniform_check(clean, uniform));
  CHECK(towards_uniform_check(clean, clean));
  std::vector<double> further{0.55, 0.25, 0.15, 0.05};
  CHECK_FALSE(towards_uniform_check(clean, further));
}

TEST_CASE("prefix mass is implied by towards-uniform plus rank preservation") {
  // Fuzz over flip-channel outputs, which satisfy both conditions.
  Rng rng(201);
  int checked = 0;
  for (int trial = 0; trial < 100000 && checked < 20000; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    std::vector<double> p(k);
    double sum = 0.0;
    for (double& v : p) {
      v = rng.uniform_pos();
      sum += v;
    }
    for (double& v : p) v /= sum;
    const double eps = rng.uniform(0.0, 0.999);
    std::vector<double> noisy(k);
    const bool flip_channel = rng.bernoulli(0.5);
    for (std::size_t j = 0; j < k; ++j) {
      noisy[j] = flip_channel
                     ? (1.0 - eps) * p[j] + eps / static_cast<double>(k)
                     : (1.0 - eps) * p[j] +
                           eps * (1.0 - p[j]) / (static_cast<double>(k) - 1.0);
    }
    if (!(towards_uniform_check(p, noisy) && rank_preservation_check(p, noisy))) {
      continue;
    }
    ++checked;
    CHECK(prefix_mass_check(p, noisy));
  }
  CHECK(checked >= 20000);
}

TEST_CASE("confusion condition check") {
  Matrix identity{{1, 0}, {0, 1}};
  std::vector<double> grid{0.0, 0.5, 1.0};
  std::vector<std::vector<double>> cdfs{{0.2, 0.6, 1.0}, {0.1, 0.5, 1.0}};
  auto ok = confusion_condition_check(identity, cdfs, cdfs, grid);
  CHECK(ok[0]);
  CHECK(ok[1]);

  // Noisy CDFs pointwise below clean: condition holds for any channel.
  std::vector<std::vector<double>> lower{{0.1, 0.4, 0.9}, {0.05, 0.3, 0.8}};
  Matrix mix{{0.7, 0.3}, {0.4, 0.6}};
  ok = confusion_condition_check(mix, cdfs, lower, grid);
  CHECK_FALSE(ok[0]);  // mixture of lower CDFs cannot reach the clean one
  ok = confusion_condition_check(mix, lower, cdfs, grid);
  CHECK(ok[0]);
  CHECK(ok[1]);

  // Constructed 3-class counterexample: uniform channel, one noisy class
  // far above the clean CDF cannot rescue a clean class whose CDF is higher
  // than the mixture.
  Matrix uniform3{{1.0 / 3, 1.0 / 3, 1.0 / 3},
                  {1.0 / 3, 1.0 / 3, 1.0 / 3},
                  {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  std::vector<std::vector<double>> clean3{
      {0.9, 0.95, 1.0}, {0.1, 0.2, 1.0}, {0.1, 0.2, 1.0}};
  std::vector<std::vector<double>> noisy3{
      {0.95, 1.0, 1.0}, {0.0, 0.1, 1.0}, {0.0, 0.05, 1.0}};
  ok = confusion_condition_check(uniform3, clean3, noisy3, grid);
  CHECK_FALSE(ok[0]);
}

TEST_CASE("taylor risk bounds") {
  auto b = taylor_risk_bounds(0.3, -2.0, 5.0, 0.0);
  CHECK(b.lower == doctest::Approx(0.3));
  CHECK(b.upper == doctest::Approx(0.3));

  b = taylor_risk_bounds(0.3, 4.0, 4.0, 0.1);
  CHECK(b.lower == doctest::Approx(b.upper));

  // Convex loss (q >= 0): upper bound is at most alpha.
  b = taylor_risk_bounds(0.3, 1.0, 2.0, 0.1);
  CHECK(b.upper <= 0.3);
  CHECK(b.lower <= b.upper);
  CHECK_THROWS_AS(taylor_risk_bounds(0.3, 2.0, 1.0, 0.1), std::domain_error);
}

TEST_CASE("taylor bounds contain the true clean risk (MC oracle)") {
  // Smooth loss on a fixed interval, gaussian additive noise. The clean
  // risk must live inside [alpha - Q Var(Z)/2, alpha - q Var(Z)/2], where
  // alpha is the (exact MC) noisy risk.
  Rng rng(202);
  const double a = -1.0, b = 1.0;
  const SmoothLossParams params{1.0, 1.0};
  const double sd_y = 0.8, sd_z = 0.3;
  const int n = 2000000;
  double noisy_risk = 0.0, clean_risk = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = sd_y * rng.normal();
    const double z = sd_z * rng.normal();
    clean_risk += smooth_miscoverage_param(y, a, b, params);
    noisy_risk += smooth_miscoverage_param(y + z, a, b, params);
  }
  clean_risk /= n;
  noisy_risk /= n;
  const auto ext = second_derivative_extrema(a, b, params);
  const auto bounds = taylor_risk_bounds(noisy_risk, ext.min_dd, ext.max_dd,
                                         sd_z * sd_z);
  const double sigma = 0.5 / std::sqrt(static_cast<double>(n));
  CHECK(clean_risk >= bounds.lower - 3.0 * sigma);
  CHECK(clean_risk <= bounds.upper + 3.0 * sigma);
}

TEST_CASE("smooth coverage lower bound") {
  // Markov saturation: noisy risk equal to h(d) with no noise -> bound 0.
  CHECK(smooth_coverage_lower_bound(h_of_d(1.0), 0.0, 0.0, 1.0) ==
        doctest::Approx(0.0));
  CHECK(smooth_coverage_lower_bound(1.0, 0.0, 0.0, 1.0) ==
        doctest::Approx(1.0 - 1.0 / 1.46211715726).epsilon(1e-6));
  // Clipping.
  CHECK(smooth_coverage_lower_bound(5.0, 0.0, 0.0, 1.0) == doctest::Approx(0.0));
  CHECK(smooth_coverage_lower_bound(0.0, 0.0, 0.0, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("lipschitz coverage bound") {
  CHECK(lipschitz_coverage_bound(0.9, 1.0, 0.0) == doctest::Approx(0.9));
  CHECK(lipschitz_coverage_bound(0.9, 1.0, 0.1) == doctest::Approx(0.8));
  CHECK(lipschitz_coverage_bound(0.1, 5.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("sandwich containment on a discrete dominated instance") {
  // Scores are label values plus a tie-breaking uniform; the noisy channel
  // shifts mass upward so the noisy score CDF is dominated. Analytic u from
  // the piecewise-linear CDFs; empirical clean coverage must respect the
  // sandwich.
  Rng rng(203);
  const std::vector<double> p{0.4, 0.3, 0.2, 0.1};
  // Upward-shift channel: from label i, stay with 0.8 else move to i+1 (3 stays).
  Matrix t{{0.8, 0.2, 0.0, 0.0},
           {0.0, 0.8, 0.2, 0.0},
           {0.0, 0.0, 0.8, 0.2},
           {0.0, 0.0, 0.0, 1.0}};
  std::vector<double> p_noisy(4, 0.0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) p_noisy[j] += p[i] * t[i][j];
  }

  // CDFs at integer breakpoints (score = label + U): F(m) = sum_{y<m} p(y).
  // The piecewise-linear difference peaks at breakpoints.
  double u = 0.0;
  double fc = 0.0, fn = 0.0;
  for (int m = 0; m < 4; ++m) {
    fc += p[m];
    fn += p_noisy[m];
    u = std::max(u, fc - fn);
    CHECK(fn <= fc + 1e-12);  // dominance holds analytically
  }

  const double alpha = 0.2;
  const std::size_t n = 79;
  const int trials = 4000;
  double covered = 0.0;
  int total_tests = 0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> noisy_scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double uu = rng.uniform();
      double acc = 0.0;
      int label = 3;
      for (int j = 0; j < 4; ++j) {
        acc += p[j];
        if (uu < acc) {
          label = j;
          break;
        }
      }
      const int noisy_label = apply_confusion(label, t, rng);
      noisy_scores[i] = noisy_label + rng.uniform();
    }
    const auto thr = conformal_quantile(noisy_scores, alpha);
    for (int j = 0; j < 25; ++j) {
      const double uu = rng.uniform();
      double acc = 0.0;
      int label = 3;
      for (int jj = 0; jj < 4; ++jj) {
        acc += p[jj];
        if (uu < acc) {
          label = jj;
          break;
        }
      }
      if (label + rng.uniform() <= thr.qhat) covered += 1.0;
      ++total_tests;
    }
  }
  const double rate = covered / total_tests;
  const auto sandwich = sandwich_from_dominance(alpha, n, u);
  const double sigma = 0.5 / std::sqrt(static_cast<double>(trials));
  CHECK(rate >= sandwich.lower - 3.0 * sigma);
  CHECK(rate <= sandwich.upper + 3.0 * sigma);
}
