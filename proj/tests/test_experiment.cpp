#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cpnoise/experiment.hpp"

using namespace cpnoise;

namespace {

ExperimentConfig small_classification_config() {
  return parse_config_text(R"({
    "task": "classification",
    "model": "oracle",
    "score": "hps",
    "alpha": 0.1,
    "generator": {"k": 6, "d": 20},
    "n-train": 200, "n-cal": 100, "n-test": 400,
    "trials": 20,
    "seed": 7
  })");
}

double summary_mean(const ExperimentResult& r, std::size_t alpha_idx,
                    const std::string& col) {
  return r.summary.at("per_alpha").at(alpha_idx).at("stats").at(col).at("mean")
      .get<double>();
}

}  // namespace

TEST_CASE("config parsing") {
  auto cfg = small_classification_config();
  CHECK(cfg.task == TaskConfigKind::classification);
  CHECK(cfg.cls_gen.k == 6);
  CHECK(cfg.alphas == std::vector<double>{0.1});

  // Unknown keys are hard errors, no silent typos.
  CHECK_THROWS_AS(parse_config_text(R"({"seed": 1, "trails": 3})"), config_error);
  CHECK_THROWS_AS(
      parse_config_text(R"({"seed": 1, "noise": {"kind": "flip", "epsilom": 0.1}})"),
      config_error);

  // Seed is mandatory.
  CHECK_THROWS_AS(parse_config_text(R"({"task": "classification"})"), config_error);

  // Alpha list form.
  auto multi = parse_config_text(R"({"seed": 1, "alpha": [0.05, 0.1, 0.2]})");
  CHECK(multi.alphas.size() == 3);

  // Invalid JSON.
  CHECK_THROWS_AS(parse_config_text("{nope"), config_error);

  // Smooth-loss targets must sit on the offset scale.
  CHECK_THROWS_AS(parse_config_text(
                      R"({"seed": 1, "task": "regression-crc-smooth", "alpha": 0.1})"),
                  config_error);
}

TEST_CASE("clean classification baseline covers at the nominal rate") {
  const auto cfg = small_classification_config();
  const auto result = run_experiment(cfg);
  CHECK(result.rows.size() == cfg.trials);
  const double cov = summary_mean(result, 0, "coverage_clean");
  CHECK(cov > 0.87);
  CHECK(cov < 0.94);
  // Without noise the noisy and clean test labels coincide.
  CHECK(summary_mean(result, 0, "coverage_noisy") == doctest::Approx(cov));
  // Column count is fixed by the config.
  for (const auto& row : result.rows) {
    CHECK(row.values.size() == result.columns.size());
  }
}

TEST_CASE("csv bytes are reproducible for identical config and seed") {
  const auto cfg = small_classification_config();
  const auto a = csv_to_string(run_experiment(cfg));
  const auto b = csv_to_string(run_experiment(cfg));
  CHECK(a == b);
  CHECK(a.find("trial,alpha,qhat,coverage_clean") == 0);

  // A different seed changes the bytes.
  auto cfg2 = cfg;
  cfg2.seed = 8;
  CHECK(csv_to_string(run_experiment(cfg2)) != a);
}

TEST_CASE("jobs parameter does not change results") {
  auto cfg = small_classification_config();
  cfg.trials = 8;
  cfg.jobs = 1;
  const auto a = csv_to_string(run_experiment(cfg));
  cfg.jobs = 4;
  const auto b = csv_to_string(run_experiment(cfg));
  CHECK(a == b);
}

TEST_CASE("uniform flip keeps noisy coverage nominal and clean conservative") {
  auto cfg = parse_config_text(R"({
    "task": "classification",
    "model": "oracle",
    "score": "hps",
    "alpha": 0.1,
    "noise": {"kind": "uniform-flip", "epsilon": 0.05},
    "generator": {"k": 10, "d": 30},
    "n-train": 200, "n-cal": 200, "n-test": 500,
    "trials": 30,
    "seed": 11,
    "bounds": ["random-flip-sandwich", "marginal-tv", "dominance"]
  })");
  const auto result = run_experiment(cfg);
  // Harness sanity oracle: noisy-test coverage obeys the exchangeable
  // guarantee regardless of the noise model.
  const double noisy = summary_mean(result, 0, "coverage_noisy");
  const double sigma = 0.3 / std::sqrt(30.0);
  CHECK(noisy >= 0.9 - 3.0 * sigma);
  CHECK(noisy <= 0.9 + 1.0 / 201.0 + 3.0 * sigma);
  const double clean = summary_mean(result, 0, "coverage_clean");
  CHECK(clean >= 0.9 - 3.0 * sigma);
  CHECK(clean <= summary_mean(result, 0, "rf_upper") + 3.0 * sigma);
  CHECK(summary_mean(result, 0, "achieved_noise_rate") ==
        doctest::Approx(0.05).epsilon(0.15));
  // The built-in sanity oracle confirms the exchangeable noisy guarantee.
  CHECK(result.summary.at("per_alpha").at(0).at("noisy_coverage_sanity").at("ok")
            .get<bool>());
}

TEST_CASE("regression additive noise run") {
  auto cfg = parse_config_text(R"({
    "task": "regression",
    "model": "linear-quantile",
    "score": "cqr",
    "alpha": 0.1,
    "noise": {"kind": "additive", "additive-dist": "gauss", "c": 1.0},
    "generator": {"d": 10},
    "n-train": 400, "n-cal": 150, "n-test": 300,
    "trials": 8,
    "seed": 3,
    "quantile-steps": 120,
    "bounds": ["dominance"]
  })");
  const auto result = run_experiment(cfg);
  const double noisy = summary_mean(result, 0, "coverage_noisy");
  const double sigma = 0.3 / std::sqrt(8.0);
  CHECK(noisy >= 0.9 - 3.0 * sigma);
  const double clean = summary_mean(result, 0, "coverage_clean");
  CHECK(clean >= 0.9 - 3.0 * sigma);
}

TEST_CASE("residual magnitude score run") {
  auto cfg = parse_config_text(R"({
    "task": "regression",
    "model": "linear-mean",
    "score": "rm",
    "alpha": 0.1,
    "noise": {"kind": "additive", "additive-dist": "gauss", "c": 0.5},
    "generator": {"d": 10},
    "n-train": 400, "n-cal": 150, "n-test": 300,
    "trials": 8,
    "seed": 29
  })");
  const auto result = run_experiment(cfg);
  const double noisy = summary_mean(result, 0, "coverage_noisy");
  const double sigma = 0.3 / std::sqrt(8.0);
  CHECK(noisy >= 0.9 - 3.0 * sigma);
  CHECK(summary_mean(result, 0, "coverage_clean") >= 0.9 - 3.0 * sigma);

  // Model/score mismatches are rejected.
  CHECK_THROWS_AS(parse_config_text(R"({
    "task": "regression", "model": "oracle", "score": "cqr", "seed": 1
  })"),
                  config_error);
}

TEST_CASE("regression wrong-to-right attack under-covers") {
  auto cfg = parse_config_text(R"({
    "task": "regression",
    "model": "linear-quantile",
    "score": "cqr",
    "alpha": 0.1,
    "noise": {"kind": "adversarial:w2r", "epsilon": 0.07},
    "generator": {"d": 10},
    "n-train": 400, "n-cal": 200, "n-test": 400,
    "trials": 10,
    "seed": 5,
    "quantile-steps": 120
  })");
  const auto result = run_experiment(cfg);
  const double clean = summary_mean(result, 0, "coverage_clean");
  CHECK(clean < 0.895);
  CHECK(summary_mean(result, 0, "achieved_noise_rate") ==
        doctest::Approx(0.07).epsilon(0.15));
}

TEST_CASE("crc smooth threshold shrinks as the tolerated risk grows") {
  auto cfg = parse_config_text(R"({
    "task": "regression-crc-smooth",
    "alpha": [1.1, 1.2, 1.3],
    "noise": {"kind": "additive", "additive-dist": "gauss", "c": 0.6324555320336759},
    "generator": {"bimodal": true, "gap": 4.0, "component-sd": 0.1},
    "n-train": 400, "n-cal": 200, "n-test": 300,
    "trials": 4,
    "seed": 13,
    "quantile-steps": 120,
    "lambda-grid": {"lo": -4.0, "hi": 8.0, "points": 601}
  })");
  const auto result = run_experiment(cfg);
  const double l1 = summary_mean(result, 0, "lambda");
  const double l2 = summary_mean(result, 1, "lambda");
  const double l3 = summary_mean(result, 2, "lambda");
  CHECK(l1 >= l2 - 1e-9);
  CHECK(l2 >= l3 - 1e-9);
  // var_z column carries the configured noise variance.
  CHECK(summary_mean(result, 0, "var_z") == doctest::Approx(0.4).epsilon(1e-9));
  // Taylor bounds bracket their own center by construction.
  CHECK(summary_mean(result, 0, "taylor_lower") <=
        summary_mean(result, 0, "taylor_upper"));
}

TEST_CASE("multi-label task emits per-trial FNR rows") {
  auto cfg = parse_config_text(R"({
    "task": "multi-label",
    "alpha": [0.2, 0.4],
    "multi-label": {"preset": "deterministic-count", "labels": 12, "contexts": 3, "rate": 0.3,
                     "n-cal": 80, "n-test": 40},
    "trials": 30,
    "seed": 17
  })");
  const auto result = run_experiment(cfg);
  CHECK(result.rows.size() == 60);  // trials x alphas
  const double clean = summary_mean(result, 0, "fnr_clean");
  const double noisy = summary_mean(result, 0, "fnr_noisy");
  CHECK(clean <= noisy + 0.05);
}

TEST_CASE("explicit confusion channel run") {
  auto cfg = parse_config_text(R"({
    "task": "classification",
    "model": "oracle",
    "score": "hps",
    "alpha": 0.1,
    "noise": {"kind": "confusion",
              "transition": [[0.9, 0.05, 0.05], [0.1, 0.85, 0.05], [0.0, 0.1, 0.9]]},
    "generator": {"k": 3, "d": 8},
    "n-train": 100, "n-cal": 150, "n-test": 400,
    "trials": 15,
    "seed": 23
  })");
  const auto result = run_experiment(cfg);
  const double noisy = summary_mean(result, 0, "coverage_noisy");
  const double sigma = 0.3 / std::sqrt(15.0);
  CHECK(noisy >= 0.9 - 3.0 * sigma);
  // Empirical disagreement matches the channel's average flip mass loosely.
  const double achieved = summary_mean(result, 0, "achieved_noise_rate");
  CHECK(achieved > 0.03);
  CHECK(achieved < 0.25);
}

TEST_CASE("per-sample loss audit dump") {
  auto cfg = small_classification_config();
  cfg.trials = 3;
  cfg.out_losses = "losses.csv";
  const auto result = run_experiment(cfg);
  REQUIRE(!result.sample_losses_csv.empty());
  std::istringstream ss(result.sample_losses_csv);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "trial,alpha,sample,loss_clean,loss_noisy");
  std::size_t lines = 0;
  std::string line;
  double sum_clean = 0.0;
  while (std::getline(ss, line)) {
    ++lines;
    std::stringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    CHECK(cell == "0");  // first trial only
    std::getline(ls, cell, ',');
    std::getline(ls, cell, ',');
    std::getline(ls, cell, ',');
    sum_clean += std::stod(cell);
  }
  CHECK(lines == cfg.n_test * cfg.alphas.size());
  // The audited per-sample losses reproduce the trial-0 coverage row.
  const double cov0 = std::stod(result.rows[0].values[3]);
  CHECK(1.0 - sum_clean / static_cast<double>(lines) == doctest::Approx(cov0));
}

TEST_CASE("run aborts when too many trials fail") {
  auto cfg = small_classification_config();
  cfg.noise.kind = NoiseKind::vector_flip;  // unsupported for this task
  CHECK_THROWS_AS(run_experiment(cfg), std::runtime_error);
}

TEST_CASE("empty result emits a header-only csv") {
  ExperimentResult result;
  result.columns = {"trial", "alpha", "x"};
  std::ostringstream ss;
  emit_csv(result, ss);
  CHECK(ss.str() == "trial,alpha,x\n");
}

TEST_CASE("csv round trip preserves the emitted values") {
  const auto cfg = small_classification_config();
  const auto result = run_experiment(cfg);
  const auto text = csv_to_string(result);
  std::istringstream ss(text);
  std::string header;
  std::getline(ss, header);
  std::string line;
  std::size_t row_idx = 0;
  while (std::getline(ss, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      CHECK(cell == result.rows[row_idx].values[col]);
      ++col;
    }
    CHECK(col == result.columns.size());
    ++row_idx;
  }
  CHECK(row_idx == result.rows.size());
}
