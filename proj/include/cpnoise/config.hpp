#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpnoise/errors.hpp"
#include "cpnoise/noise.hpp"
#include "cpnoise/scores.hpp"
#include "cpnoise/synth.hpp"

namespace cpnoise {

enum class ModelKind { oracle, oracle_clean, linear_quantile, linear_mean };

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "oracle") return ModelKind::oracle;
  if (s == "oracle-clean") return ModelKind::oracle_clean;
  if (s == "linear-quantile") return ModelKind::linear_quantile;
  if (s == "linear-mean") return ModelKind::linear_mean;
  throw config_error("unknown model kind: " + s);
}

enum class TaskConfigKind {
  classification,
  regression,
  regression_crc_smooth,
  multi_label,
  segmentation,
};

inline TaskConfigKind parse_task_kind(const std::string& s) {
  if (s == "classification") return TaskConfigKind::classification;
  if (s == "regression") return TaskConfigKind::regression;
  if (s == "regression-crc-smooth") return TaskConfigKind::regression_crc_smooth;
  if (s == "multi-label") return TaskConfigKind::multi_label;
  if (s == "segmentation") return TaskConfigKind::segmentation;
  throw config_error("unknown task kind: " + s);
}

struct LambdaGridSpec {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t points = 1001;
};

struct MultiLabelConfig {
  std::string preset = "deterministic-count";  // deterministic-count | independent-rates | violating
  std::size_t labels = 12;
  std::size_t contexts = 3;
  double rate = 0.3;  // swap rate, shared flip rate, or hot-label rate
  std::size_t n_cal = 100;
  std::size_t n_test = 50;
};

struct ExperimentConfig {
  TaskConfigKind task = TaskConfigKind::classification;
  ModelKind model = ModelKind::oracle;
  ScoreKind score = ScoreKind::hps;
  std::vector<double> alphas{0.1};
  NoiseSpec noise;
  bool corrupt_train = true;

  ClsGenSpec cls_gen;
  RegGenSpec reg_gen;
  BimodalSpec bimodal_gen;
  bool use_bimodal = false;

  std::size_t n_train = 2000;
  std::size_t n_cal = 500;
  std::size_t n_test = 2000;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  bool seed_set = false;

  std::vector<std::string> bounds;  // requested bound evaluations

  std::size_t quantile_steps = 200;
  double quantile_step_size = 0.5;
  std::vector<double> base_quantiles{0.05, 0.95};  // crc-smooth base band

  LambdaGridSpec lambda_grid;
  MultiLabelConfig multi_label;

  std::size_t jobs = 1;
  std::string out_csv;
  std::string out_json;
  std::string out_losses;  // per-sample loss audit file (first trial)

  void validate() const {
    if (trials < 1) throw config_error("config: trials must be >= 1");
    if (n_cal < 1 || n_test < 1) throw config_error("config: splits must be positive");
    if (!seed_set) throw config_error("config: seed is required (no wall-clock seeding)");
    if (alphas.empty()) throw config_error("config: alpha list is empty");
    for (double a : alphas) {
      if (task == TaskConfigKind::regression_crc_smooth) {
        // Targets live on the [1,2) scale of the smoothed loss.
        if (!(a > 1.0 && a < 2.0)) {
          throw config_error("config: smooth-loss alpha must be in (1,2)");
        }
      } else if (!(a > 0.0 && a < 1.0)) {
        throw config_error("config: alpha must be in (0,1)");
      }
    }
    if (task == TaskConfigKind::classification) {
      if (model != ModelKind::oracle && model != ModelKind::oracle_clean) {
        throw config_error("config: classification needs an oracle model");
      }
      if (score != ScoreKind::hps && score != ScoreKind::aps &&
          score != ScoreKind::aps_deterministic) {
        throw config_error("config: classification needs hps or aps scores");
      }
    }
    if (task == TaskConfigKind::regression) {
      if (score == ScoreKind::cqr && model != ModelKind::linear_quantile) {
        throw config_error("config: the cqr score needs the linear-quantile model");
      }
      if (score == ScoreKind::rm && model != ModelKind::linear_mean) {
        throw config_error("config: the rm score needs the linear-mean model");
      }
      if (score != ScoreKind::cqr && score != ScoreKind::rm) {
        throw config_error("config: regression needs the cqr or rm score");
      }
    }
    noise.validate();
  }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw config_error("config: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

inline NoiseSpec parse_noise(const json& j) {
  reject_unknown_keys(j,
                      {"kind", "epsilon", "transition", "additive-dist", "c",
                       "vector-mode", "beta", "rects", "corrupt-train"},
                      "noise");
  NoiseSpec spec;
  const std::string kind = j.value("kind", "none");
  spec.kind = parse_noise_kind(kind);
  if (spec.kind == NoiseKind::adversarial) {
    spec.adversarial = parse_adversarial_kind(kind);
  }
  spec.epsilon = j.value("epsilon", 0.0);
  if (j.contains("transition")) {
    spec.transition = j.at("transition").get<Matrix>();
  }
  if (j.contains("additive-dist")) {
    spec.additive_dist = parse_additive_dist(j.at("additive-dist").get<std::string>());
  }
  spec.additive_c = j.value("c", spec.kind == NoiseKind::additive ? 1.0 : 0.0);
  if (j.contains("vector-mode")) {
    spec.vector_mode = parse_vector_mode(j.at("vector-mode").get<std::string>());
  }
  spec.beta = j.value("beta", 0.0);
  if (j.contains("rects")) {
    for (const auto& r : j.at("rects")) {
      reject_unknown_keys(r, {"r0", "c0", "r1", "c1"}, "noise.rects");
      spec.rects.push_back(Rect{r.at("r0").get<std::size_t>(),
                                r.at("c0").get<std::size_t>(),
                                r.at("r1").get<std::size_t>(),
                                r.at("c1").get<std::size_t>()});
    }
  }
  spec.validate();
  return spec;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::reject_unknown_keys;
  reject_unknown_keys(
      j, {"task",           "model",       "score",   "alpha",
          "noise",          "generator",   "n-train", "n-cal",
          "n-test",         "trials",      "seed",    "bounds",
          "quantile-steps", "quantile-step-size",     "base-quantiles",
          "lambda-grid",    "multi-label", "out-csv", "out-json",
          "out-losses"},
      "config");

  ExperimentConfig cfg;
  if (j.contains("task")) cfg.task = parse_task_kind(j.at("task").get<std::string>());
  if (j.contains("model")) cfg.model = parse_model_kind(j.at("model").get<std::string>());
  if (j.contains("score")) cfg.score = parse_score_kind(j.at("score").get<std::string>());

  if (j.contains("alpha")) {
    cfg.alphas.clear();
    if (j.at("alpha").is_array()) {
      for (const auto& a : j.at("alpha")) cfg.alphas.push_back(a.get<double>());
    } else {
      cfg.alphas.push_back(j.at("alpha").get<double>());
    }
  }

  if (j.contains("noise")) {
    cfg.noise = detail::parse_noise(j.at("noise"));
    cfg.corrupt_train = j.at("noise").value("corrupt-train", true);
  }

  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    reject_unknown_keys(g,
                        {"k", "d", "outlier-prob", "outlier-scale", "bimodal",
                         "gap", "component-sd"},
                        "generator");
    cfg.cls_gen.k = g.value("k", cfg.cls_gen.k);
    cfg.cls_gen.d = g.value("d", cfg.cls_gen.d);
    cfg.reg_gen.d = g.value("d", cfg.reg_gen.d);
    cfg.reg_gen.outlier_prob = g.value("outlier-prob", cfg.reg_gen.outlier_prob);
    cfg.reg_gen.outlier_scale = g.value("outlier-scale", cfg.reg_gen.outlier_scale);
    cfg.use_bimodal = g.value("bimodal", false);
    cfg.bimodal_gen.gap = g.value("gap", cfg.bimodal_gen.gap);
    cfg.bimodal_gen.component_sd = g.value("component-sd", cfg.bimodal_gen.component_sd);
  }
  if (cfg.task == TaskConfigKind::regression_crc_smooth) cfg.use_bimodal = true;

  cfg.n_train = j.value("n-train", cfg.n_train);
  cfg.n_cal = j.value("n-cal", cfg.n_cal);
  cfg.n_test = j.value("n-test", cfg.n_test);
  cfg.trials = j.value("trials", cfg.trials);
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("bounds")) {
    for (const auto& b : j.at("bounds")) cfg.bounds.push_back(b.get<std::string>());
  }
  cfg.quantile_steps = j.value("quantile-steps", cfg.quantile_steps);
  cfg.quantile_step_size = j.value("quantile-step-size", cfg.quantile_step_size);
  if (j.contains("base-quantiles")) {
    cfg.base_quantiles = j.at("base-quantiles").get<std::vector<double>>();
    if (cfg.base_quantiles.size() != 2) {
      throw config_error("config: base-quantiles needs exactly two levels");
    }
  }
  if (j.contains("lambda-grid")) {
    const auto& g = j.at("lambda-grid");
    reject_unknown_keys(g, {"lo", "hi", "points"}, "lambda-grid");
    cfg.lambda_grid.lo = g.value("lo", cfg.lambda_grid.lo);
    cfg.lambda_grid.hi = g.value("hi", cfg.lambda_grid.hi);
    cfg.lambda_grid.points = g.value("points", cfg.lambda_grid.points);
  } else if (cfg.task == TaskConfigKind::regression_crc_smooth) {
    // Margin thresholds live on the response scale, not [0,1]; allow
    // shrinking as well as widening by default.
    cfg.lambda_grid = {-4.0, 8.0, 1201};
  }
  if (j.contains("multi-label")) {
    const auto& m = j.at("multi-label");
    reject_unknown_keys(m, {"preset", "labels", "contexts", "rate", "n-cal", "n-test"},
                        "multi-label");
    cfg.multi_label.preset = m.value("preset", cfg.multi_label.preset);
    cfg.multi_label.labels = m.value("labels", cfg.multi_label.labels);
    cfg.multi_label.contexts = m.value("contexts", cfg.multi_label.contexts);
    cfg.multi_label.rate = m.value("rate", cfg.multi_label.rate);
    cfg.multi_label.n_cal = m.value("n-cal", cfg.multi_label.n_cal);
    cfg.multi_label.n_test = m.value("n-test", cfg.multi_label.n_test);
  }
  cfg.out_csv = j.value("out-csv", "");
  cfg.out_json = j.value("out-json", "");
  cfg.out_losses = j.value("out-losses", "");

  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  try {
    return parse_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
}

}  // namespace cpnoise
