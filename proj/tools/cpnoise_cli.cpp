// Command-line front end: runs simulation experiments from JSON configs and
// exposes the calibration, bound-evaluation, online, attack, and dataset
// generation surfaces on files.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cpnoise/adversarial.hpp"
#include "cpnoise/bounds.hpp"
#include "cpnoise/calibrate.hpp"
#include "cpnoise/config.hpp"
#include "cpnoise/dataset.hpp"
#include "cpnoise/experiment.hpp"
#include "cpnoise/online.hpp"
#include "cpnoise/parallel.hpp"
#include "cpnoise/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpnoise;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitRuntime = 4;

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::size_t jobs = default_jobs();  // results are independent of jobs
  std::string out_dir;
};

int run_simulate(const SimulateArgs& args) {
  ExperimentConfig cfg = parse_config_text(read_file(args.config_path));
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.seed_set = true;
  }
  if (args.trials) cfg.trials = *args.trials;
  cfg.jobs = args.jobs;
  cfg.validate();

  const auto result = run_experiment(cfg);

  fs::path dir = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
  fs::create_directories(dir);
  const fs::path csv_path =
      dir / (cfg.out_csv.empty() ? "trials.csv" : cfg.out_csv);
  const fs::path json_path =
      dir / (cfg.out_json.empty() ? "summary.json" : cfg.out_json);
  emit_csv(result, csv_path.string());
  emit_json(result, json_path.string());
  if (!cfg.out_losses.empty()) {
    const fs::path losses_path = dir / cfg.out_losses;
    std::ofstream f(losses_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + losses_path.string());
    f << result.sample_losses_csv;
    std::cout << "wrote " << losses_path.string() << "\n";
  }
  std::cout << "wrote " << csv_path.string() << " and " << json_path.string()
            << "\n";
  return kExitOk;
}

// --- calibrate --------------------------------------------------------------

// Reads rows of comma-separated numbers, skipping non-numeric header lines.
std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (numeric && !row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw config_error("no numeric rows in " + path);
  return rows;
}

int run_calibrate(const std::string& input, double alpha, const std::string& mode,
                  double b_bound, const std::string& out) {
  const auto rows = read_numeric_csv(input);
  json result;
  if (mode == "quantile") {
    std::vector<double> scores;
    for (const auto& row : rows) scores.push_back(row.front());
    const auto thr = conformal_quantile(scores, alpha);
    result["mode"] = "quantile";
    result["alpha"] = alpha;
    result["n"] = thr.n;
    if (thr.saturated()) {
      result["qhat"] = "inf";
    } else {
      result["qhat"] = thr.qhat;
    }
  } else if (mode == "crc") {
    std::vector<double> grid, losses;
    std::size_t n = 0;
    for (const auto& row : rows) {
      if (row.size() < 3) {
        throw config_error("crc mode needs lambda,loss,n rows");
      }
      grid.push_back(row[0]);
      losses.push_back(row[1]);
      n = static_cast<std::size_t>(row[2]);
    }
    const auto thr = crc_threshold(grid, losses, alpha, b_bound, n);
    result["mode"] = "crc";
    result["alpha"] = alpha;
    result["n"] = n;
    result["lambda"] = thr.lambda;
    result["b"] = b_bound;
    if (thr.envelope_applied) result["warning"] = "monotone envelope applied";
  } else {
    throw config_error("calibrate: mode must be quantile or crc");
  }

  if (out.empty()) {
    std::cout << result.dump(2) << "\n";
  } else {
    std::ofstream f(out, std::ios::binary);
    f << result.dump(2) << "\n";
    std::cout << "wrote " << out << "\n";
  }
  return kExitOk;
}

// --- bounds -----------------------------------------------------------------

int run_bounds(const std::string& input) {
  const json j = json::parse(read_file(input));
  const std::string kind = j.at("bound").get<std::string>();
  json out;
  out["bound"] = kind;
  if (kind == "sandwich-from-dominance") {
    const auto s = sandwich_from_dominance(j.at("alpha").get<double>(),
                                           j.at("n").get<std::size_t>(),
                                           j.at("u").get<double>());
    out["lower"] = s.lower;
    out["upper"] = s.upper;
    out["upper_raw"] = s.upper_raw;
    out["terms"] = {{"alpha", s.alpha},
                    {"finite_sample", s.finite_sample_term},
                    {"noise", s.noise_term}};
  } else if (kind == "random-flip-sandwich") {
    const auto s = random_flip_sandwich(
        j.at("alpha").get<double>(), j.at("n").get<std::size_t>(),
        j.at("epsilon").get<double>(), j.at("k").get<int>());
    out["lower"] = s.lower;
    out["upper"] = s.upper;
    out["upper_raw"] = s.upper_raw;
    out["terms"] = {{"alpha", s.alpha},
                    {"finite_sample", s.finite_sample_term},
                    {"noise", s.noise_term}};
  } else if (kind == "marginal-tv") {
    out["tv"] = class_marginal_tv_term(j.at("p-clean").get<std::vector<double>>(),
                                       j.at("p-noisy").get<std::vector<double>>());
  } else if (kind == "tv-adjusted-alpha") {
    out["alpha_adjusted"] =
        tv_adjusted_alpha(j.at("alpha").get<double>(),
                          j.at("n").get<std::size_t>(), j.at("epsilon").get<double>());
  } else if (kind == "tv-coverage-upper") {
    out["upper"] = tv_coverage_upper(j.at("alpha").get<double>(),
                                     j.at("n").get<std::size_t>(),
                                     j.at("xi").get<double>());
  } else if (kind == "taylor-risk") {
    const auto b = taylor_risk_bounds(
        j.at("alpha-noisy").get<double>(), j.at("q").get<double>(),
        j.at("Q").get<double>(), j.at("var-z").get<double>());
    out["lower"] = b.lower;
    out["upper"] = b.upper;
    out["terms"] = {{"q", b.q}, {"Q", b.big_q}, {"var_z", b.var_z}};
  } else if (kind == "smooth-coverage-lower") {
    out["lower"] = smooth_coverage_lower_bound(
        j.at("noisy-smooth-risk").get<double>(), j.at("mean-q").get<double>(),
        j.at("var-z").get<double>(), j.at("d").get<double>());
    out["h_of_d"] = h_of_d(j.at("d").get<double>());
  } else if (kind == "lipschitz-coverage") {
    out["lower"] = lipschitz_coverage_bound(
        j.at("noisy-coverage").get<double>(),
        j.at("mean-len-times-k").get<double>(), j.at("mean-abs-z").get<double>());
  } else if (kind == "h-of-d") {
    out["value"] = h_of_d(j.at("d").get<double>());
  } else {
    throw config_error("bounds: unknown bound " + kind);
  }
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

// --- online -----------------------------------------------------------------

int run_online_cmd(std::size_t steps, double gamma, double alpha,
                   const std::string& loss, const std::string& noise_json,
                   std::uint64_t seed, const std::string& out) {
  NoiseSpec noise;
  if (!noise_json.empty()) {
    noise = detail::parse_noise(json::parse(noise_json));
  }
  if (noise.kind != NoiseKind::none && noise.kind != NoiseKind::additive) {
    throw config_error("online: only additive noise is defined on a stream");
  }

  Rng rng(seed);
  std::ofstream f;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    f.open(out, std::ios::binary);
    if (!f) throw config_error("cannot open for writing: " + out);
    os = &f;
  }
  *os << "t,theta,loss_noisy,loss_clean,mc_noisy,mc_clean\n";

  OnlineState state;
  state.alpha = alpha;
  state.gamma = gamma;

  if (loss == "miscoverage") {
    for (std::size_t t = 0; t < steps; ++t) {
      const double mu = std::sin(0.01 * static_cast<double>(t));
      IntervalPred base{mu - 0.8, mu + 0.8, {}, {}};
      const double y_clean = mu + rng.normal();
      const double y_noisy =
          noise.kind == NoiseKind::none
              ? y_clean
              : apply_additive(y_clean, noise.additive_dist, noise.additive_c, rng);
      const auto rec = online_step(state, base, y_noisy, y_clean);
      *os << t << "," << csvio::format(rec.theta_before) << ","
          << csvio::format(rec.loss_noisy) << ","
          << csvio::format(*rec.loss_clean) << "," << rec.mc_noisy << ","
          << rec.mc_clean << "\n";
    }
  } else if (loss == "image") {
    const std::size_t side = 8;
    for (std::size_t t = 0; t < steps; ++t) {
      const double mu = std::sin(0.01 * static_cast<double>(t));
      IntervalGrid base(side, side);
      Grid clean(side, side), noisy(side, side);
      for (std::size_t i = 0; i < base.size(); ++i) {
        const double pixel_mu = mu + 0.1 * static_cast<double>(i % side);
        base.v[i] = {pixel_mu - 0.8, pixel_mu + 0.8};
        clean.v[i] = pixel_mu + rng.normal();
        noisy.v[i] = noise.kind == NoiseKind::none
                         ? clean.v[i]
                         : apply_additive(clean.v[i], noise.additive_dist,
                                          noise.additive_c, rng);
      }
      const auto rec = image_online_step(state, base, noisy, clean);
      *os << t << "," << csvio::format(rec.theta_before) << ","
          << csvio::format(rec.loss_noisy) << ","
          << csvio::format(*rec.loss_clean) << "," << rec.mc_noisy << ","
          << rec.mc_clean << "\n";
    }
  } else {
    throw config_error("online: loss must be miscoverage or image");
  }
  if (!out.empty()) std::cout << "wrote " << out << "\n";
  return kExitOk;
}

// --- attack -----------------------------------------------------------------

// Input CSV: one row per calibration point, columns score_0..score_{K-1},label.
int run_attack(const std::string& input, const std::string& kind, double epsilon,
               double alpha, std::uint64_t seed, const std::string& out) {
  const auto rows = read_numeric_csv(input);
  const std::size_t k = rows.front().size() - 1;
  if (k < 2) throw config_error("attack: need at least two score columns");
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  for (const auto& row : rows) {
    if (row.size() != k + 1) throw config_error("attack: ragged input");
    scores.emplace_back(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
    labels.push_back(static_cast<int>(row.back()));
  }

  Rng rng(seed);
  json report;
  std::vector<int> corrupted;
  if (kind == "w2r") {
    std::vector<int> preds;
    for (const auto& s : scores) {
      preds.push_back(static_cast<int>(
          std::min_element(s.begin(), s.end()) - s.begin()));
    }
    auto res = wrong_to_right(labels, preds, epsilon, rng);
    corrupted = std::move(res.labels);
    report["achieved_rate"] = res.achieved_rate;
  } else if (kind == "optimal") {
    const auto max_swaps = static_cast<std::size_t>(
        std::llround(epsilon * static_cast<double>(labels.size())));
    auto res = optimal_adversarial(scores, labels, alpha, max_swaps);
    corrupted = std::move(res.labels);
    report["swaps"] = res.swaps;
    report["qhat_trajectory"] = res.qhat_trajectory;
  } else if (kind == "mfc") {
    Matrix counts(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto pred = static_cast<std::size_t>(
          std::min_element(scores[i].begin(), scores[i].end()) -
          scores[i].begin());
      counts[static_cast<std::size_t>(labels[i])][pred] += 1.0;
    }
    auto res = most_frequent_confusion(labels, counts, epsilon, rng);
    corrupted = std::move(res.labels);
    report["achieved_rate"] = res.achieved_rate;
  } else {
    throw config_error("attack: kind must be w2r, optimal, or mfc");
  }

  std::ofstream f(out, std::ios::binary);
  if (!f) throw config_error("cannot open for writing: " + out);
  f << "label\n";
  for (int y : corrupted) f << y << "\n";
  report["out"] = out;
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// --- gen --------------------------------------------------------------------

int run_gen(const std::string& task, std::size_t n, std::uint64_t seed, int k,
            int d, double gap, double component_sd, const std::string& out) {
  Rng rng(seed);
  Dataset ds;
  if (task == "classification") {
    ClsGenSpec spec;
    spec.k = k;
    spec.d = d;
    ds = gen_classification(n, with_random_weights(spec, rng), rng);
  } else if (task == "regression") {
    RegGenSpec spec;
    spec.d = d;
    ds = gen_regression(n, spec, rng);
  } else if (task == "bimodal") {
    BimodalSpec spec;
    spec.gap = gap;
    spec.component_sd = component_sd;
    ds = gen_bimodal_adversarial(n, spec, rng);
  } else {
    throw config_error("gen: task must be classification, regression, or bimodal");
  }
  dump_csv(ds, out);
  std::cout << "wrote " << out << " (" << ds.n << " rows, " << ds.d
            << " features)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformal prediction under label noise: simulation toolkit"};
  app.require_subcommand(1);

  // simulate
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "run an experiment config");
  simulate->add_option("--config", sim.config_path, "JSON config path")->required();
  std::uint64_t seed_opt = 0;
  auto* seed_flag = simulate->add_option("--seed", seed_opt, "override config seed");
  std::size_t trials_opt = 0;
  auto* trials_flag =
      simulate->add_option("--trials", trials_opt, "override config trials");
  simulate->add_option("--jobs", sim.jobs, "worker threads");
  simulate->add_option("--out-dir", sim.out_dir, "output directory");

  // calibrate
  std::string cal_input, cal_mode = "quantile", cal_out;
  double cal_alpha = 0.1, cal_b = 1.0;
  auto* calibrate = app.add_subcommand("calibrate", "compute a threshold from a CSV");
  calibrate->add_option("input", cal_input, "scores CSV (or lambda,loss,n table)")
      ->required();
  calibrate->add_option("--alpha", cal_alpha, "target level")->required();
  calibrate->add_option("--mode", cal_mode, "quantile | crc");
  calibrate->add_option("--b-bound", cal_b, "loss upper bound B (crc)");
  calibrate->add_option("--out", cal_out, "threshold JSON path (default stdout)");

  // bounds
  std::string bounds_input;
  auto* bounds_cmd = app.add_subcommand("bounds", "evaluate a bound from JSON inputs");
  bounds_cmd->add_option("input", bounds_input, "JSON file with bound inputs")
      ->required();

  // online
  std::size_t online_steps = 10000;
  double online_gamma = 0.05, online_alpha = 0.1;
  std::string online_loss = "miscoverage", online_noise, online_out;
  std::uint64_t online_seed = 1;
  auto* online_cmd = app.add_subcommand("online", "run the online calibrator");
  online_cmd->add_option("--steps", online_steps, "stream length");
  online_cmd->add_option("--gamma", online_gamma, "step size");
  online_cmd->add_option("--alpha", online_alpha, "target level");
  online_cmd->add_option("--loss", online_loss, "miscoverage | image");
  online_cmd->add_option("--noise", online_noise, "noise spec as inline JSON");
  online_cmd->add_option("--seed", online_seed, "stream seed");
  online_cmd->add_option("--out", online_out, "per-step CSV path (default stdout)");

  // attack
  std::string attack_input, attack_kind, attack_out = "attacked_labels.csv";
  double attack_eps = 0.05, attack_alpha = 0.1;
  std::uint64_t attack_seed = 1;
  auto* attack_cmd =
      app.add_subcommand("attack", "adversarially corrupt calibration labels");
  attack_cmd->add_option("input", attack_input, "CSV: score_0..score_{K-1},label")
      ->required();
  attack_cmd->add_option("--kind", attack_kind, "w2r | optimal | mfc")->required();
  attack_cmd->add_option("--epsilon", attack_eps, "corruption budget");
  attack_cmd->add_option("--alpha", attack_alpha, "level (optimal attack)");
  attack_cmd->add_option("--seed", attack_seed, "rng seed");
  attack_cmd->add_option("--out", attack_out, "corrupted labels CSV");

  // gen
  std::string gen_task, gen_out = "dataset.csv";
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 1;
  int gen_k = 10, gen_d = 100;
  double gen_gap = 4.0, gen_sd = 0.1;
  auto* gen_cmd = app.add_subcommand("gen", "dump a synthetic dataset to CSV");
  gen_cmd->add_option("--task", gen_task, "classification | regression | bimodal")
      ->required();
  gen_cmd->add_option("--n", gen_n, "sample count");
  gen_cmd->add_option("--seed", gen_seed, "rng seed");
  gen_cmd->add_option("--k", gen_k, "class count");
  gen_cmd->add_option("--d", gen_d, "feature dimension");
  gen_cmd->add_option("--gap", gen_gap, "bimodal mode separation");
  gen_cmd->add_option("--component-sd", gen_sd, "bimodal component sd");
  gen_cmd->add_option("--out", gen_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      if (seed_flag->count() > 0) sim.seed = seed_opt;
      if (trials_flag->count() > 0) sim.trials = trials_opt;
      return run_simulate(sim);
    }
    if (calibrate->parsed()) {
      return run_calibrate(cal_input, cal_alpha, cal_mode, cal_b, cal_out);
    }
    if (bounds_cmd->parsed()) return run_bounds(bounds_input);
    if (online_cmd->parsed()) {
      return run_online_cmd(online_steps, online_gamma, online_alpha,
                            online_loss, online_noise, online_seed, online_out);
    }
    if (attack_cmd->parsed()) {
      return run_attack(attack_input, attack_kind, attack_eps, attack_alpha,
                        attack_seed, attack_out);
    }
    if (gen_cmd->parsed()) {
      return run_gen(gen_task, gen_n, gen_seed, gen_k, gen_d, gen_gap, gen_sd,
                     gen_out);
    }
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const infeasibility_error& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
