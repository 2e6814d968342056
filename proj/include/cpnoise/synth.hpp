#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cpnoise/dataset.hpp"
#include "cpnoise/errors.hpp"
#include "cpnoise/noise.hpp"
#include "cpnoise/rng.hpp"
#include "cpnoise/scores.hpp"

namespace cpnoise {

// Multinomial-logit generator: X ~ N(0, I_d), Y | X ~ softmax(x^T B).
struct ClsGenSpec {
  int k = 10;
  int d = 100;
  std::vector<double> b;  // d*k row-major; drawn N(0,1) when empty

  void validate() const {
    if (k < 2) throw config_error("ClsGenSpec: k must be >= 2");
    if (d < 1) throw config_error("ClsGenSpec: d must be >= 1");
    if (!b.empty() && b.size() != static_cast<std::size_t>(d) * static_cast<std::size_t>(k)) {
      throw config_error("ClsGenSpec: weight matrix has wrong shape");
    }
  }
};

inline ClsGenSpec with_random_weights(ClsGenSpec spec, Rng& rng) {
  spec.validate();
  if (spec.b.empty()) {
    spec.b.resize(static_cast<std::size_t>(spec.d) * static_cast<std::size_t>(spec.k));
    for (double& w : spec.b) w = rng.normal();
  }
  return spec;
}

// Exact conditional class probabilities softmax(x^T B).
inline ClassProbs oracle_clean_probs(const double* x, const ClsGenSpec& spec) {
  const auto k = static_cast<std::size_t>(spec.k);
  const auto d = static_cast<std::size_t>(spec.d);
  std::vector<double> logits(k, 0.0);
  if (spec.b.empty()) throw config_error("oracle_clean_probs: weights not set");
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += x[i] * spec.b[i * k + j];
    logits[j] = acc;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  ClassProbs p;
  p.probs.resize(k);
  for (std::size_t j = 0; j < k; ++j) p.probs[j] = logits[j] / sum;
  return p;
}

// Exact pushforward of the clean conditional through the noise channel.
// Supported for channels that act on labels marginally.
inline ClassProbs oracle_noisy_probs(const double* x, const ClsGenSpec& spec,
                                     const NoiseSpec& noise) {
  ClassProbs clean = oracle_clean_probs(x, spec);
  const std::size_t k = clean.size();
  ClassProbs out;
  out.probs.assign(k, 0.0);
  switch (noise.kind) {
    case NoiseKind::none:
      return clean;
    case NoiseKind::flip:
      for (std::size_t j = 0; j < k; ++j) {
        out.probs[j] = (1.0 - noise.epsilon) * clean.probs[j] +
                       noise.epsilon / static_cast<double>(k);
      }
      return out;
    case NoiseKind::uniform_flip:
      for (std::size_t j = 0; j < k; ++j) {
        out.probs[j] = (1.0 - noise.epsilon) * clean.probs[j] +
                       noise.epsilon * (1.0 - clean.probs[j]) /
                           (static_cast<double>(k) - 1.0);
      }
      return out;
    case NoiseKind::confusion: {
      if (!noise.transition) {
        throw config_error("oracle_noisy_probs: confusion needs a transition matrix");
      }
      const Matrix& t = *noise.transition;
      if (t.size() != k) throw config_error("oracle_noisy_probs: channel size mismatch");
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          out.probs[j] += clean.probs[i] * t[i][j];
        }
      }
      return out;
    }
    default:
      throw config_error("oracle_noisy_probs: unsupported noise kind");
  }
}

inline Dataset gen_classification(std::size_t n, const ClsGenSpec& spec, Rng& rng) {
  if (n < 1) throw std::domain_error("gen_classification: n must be >= 1");
  spec.validate();
  if (spec.b.empty()) throw config_error("gen_classification: weights not set");
  Dataset ds;
  ds.kind = TaskKind::classification;
  ds.n = n;
  ds.d = static_cast<std::size_t>(spec.d);
  ds.x.resize(n * ds.d);
  ds.y_class.resize(n);
  for (double& v : ds.x) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    const ClassProbs p = oracle_clean_probs(ds.row(i), spec);
    const double u = rng.uniform();
    double acc = 0.0;
    int label = spec.k - 1;
    for (int j = 0; j < spec.k; ++j) {
      acc += p.probs[static_cast<std::size_t>(j)];
      if (u < acc) {
        label = j;
        break;
      }
    }
    ds.y_class[i] = label;
  }
  return ds;
}

// Heteroscedastic Poisson-plus-outliers generator over X ~ Unif[0,5]^d:
// Y = Pois(sin^2(Xbar) + 0.1) + 0.03 * Xbar * eta1 + outlier_scale * eta2 * 1{U < outlier_prob}.
struct RegGenSpec {
  int d = 100;
  double outlier_prob = 0.01;
  double outlier_scale = 25.0;

  void validate() const {
    if (d < 1) throw config_error("RegGenSpec: d must be >= 1");
    if (!(outlier_prob >= 0.0 && outlier_prob <= 1.0)) {
      throw config_error("RegGenSpec: outlier probability outside [0,1]");
    }
  }
};

inline Dataset gen_regression(std::size_t n, const RegGenSpec& spec, Rng& rng) {
  if (n < 1) throw std::domain_error("gen_regression: n must be >= 1");
  spec.validate();
  Dataset ds;
  ds.kind = TaskKind::regression;
  ds.n = n;
  ds.d = static_cast<std::size_t>(spec.d);
  ds.x.resize(n * ds.d);
  ds.y_real.resize(n);
  for (double& v : ds.x) v = rng.uniform(0.0, 5.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = ds.row(i);
    double xbar = 0.0;
    for (std::size_t j = 0; j < ds.d; ++j) xbar += row[j];
    xbar /= static_cast<double>(ds.d);
    const double lambda = std::sin(xbar) * std::sin(xbar) + 0.1;
    double y = static_cast<double>(rng.poisson(lambda));
    y += 0.03 * xbar * rng.normal();
    if (rng.uniform() < spec.outlier_prob) y += spec.outlier_scale * rng.normal();
    ds.y_real[i] = y;
  }
  return ds;
}

// Equal two-component location mixture with a deep low-density valley in
// between; any single interval holding 1-alpha of the mass must span the
// valley. Y is independent of the (one-dimensional, uniform) feature. This
// concretizes an under-specified simulation; the stand-in status is flagged
// in report metadata.
struct BimodalSpec {
  double gap = 4.0;         // distance between component centers
  double component_sd = 0.1;

  void validate() const {
    if (!(gap >= 0.0)) throw config_error("BimodalSpec: gap must be >= 0");
    if (!(component_sd > 0.0)) {
      throw config_error("BimodalSpec: component sd must be positive");
    }
  }
};

inline Dataset gen_bimodal_adversarial(std::size_t n, const BimodalSpec& spec,
                                       Rng& rng) {
  if (n < 1) throw std::domain_error("gen_bimodal_adversarial: n must be >= 1");
  spec.validate();
  Dataset ds;
  ds.kind = TaskKind::regression;
  ds.n = n;
  ds.d = 1;
  ds.x.resize(n);
  ds.y_real.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.x[i] = rng.uniform();
    const double center = rng.bernoulli(0.5) ? spec.gap / 2.0 : -spec.gap / 2.0;
    ds.y_real[i] = center + spec.component_sd * rng.normal();
  }
  return ds;
}

inline double bimodal_variance(const BimodalSpec& spec) {
  return spec.gap * spec.gap / 4.0 + spec.component_sd * spec.component_sd;
}

// ---------------------------------------------------------------------------
// Toy learners (stand-ins for the heavier models of the original protocols)
// ---------------------------------------------------------------------------

struct LinearModel {
  std::vector<double> w;
  double intercept = 0.0;

  double predict(const double* x) const {
    double acc = intercept;
    for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * x[j];
    return acc;
  }
};

inline double pinball_loss(const Dataset& ds, const LinearModel& m, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    const double r = ds.y_real[i] - m.predict(ds.row(i));
    total += r >= 0.0 ? tau * r : (tau - 1.0) * r;
  }
  return total / static_cast<double>(ds.n);
}

struct QuantileFit {
  LinearModel model;
  std::vector<double> loss_trace;  // best-so-far pinball loss at checkpoints
};

// Full-batch subgradient descent on the pinball loss with a 1/sqrt(step)
// schedule; returns the best iterate seen, so the recorded trace is
// nonincreasing.
inline QuantileFit fit_linear_quantile(const Dataset& ds, double tau,
                                       std::size_t steps = 200,
                                       double step_size = 0.5) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::domain_error("fit_linear_quantile: tau outside (0,1)");
  }
  if (ds.n == 0 || ds.y_real.size() != ds.n) {
    throw std::domain_error("fit_linear_quantile: need a regression dataset");
  }
  const std::size_t d = ds.d;
  LinearModel m;
  m.w.assign(d, 0.0);
  double y0 = 0.0;
  for (double y : ds.y_real) y0 += y;
  m.intercept = y0 / static_cast<double>(ds.n);

  LinearModel best = m;
  double best_loss = pinball_loss(ds, m, tau);
  if (!std::isfinite(best_loss)) {
    throw std::runtime_error("fit_linear_quantile: non-finite loss");
  }
  QuantileFit fit;
  fit.loss_trace.push_back(best_loss);

  std::vector<double> grad_w(d);
  const std::size_t checkpoint_every = std::max<std::size_t>(1, steps / 20);
  for (std::size_t step = 1; step <= steps; ++step) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      const double r = ds.y_real[i] - m.predict(ds.row(i));
      // Subgradient of the pinball loss w.r.t. the prediction.
      const double g = (r > 0.0) ? -tau : (1.0 - tau);
      const double* row = ds.row(i);
      for (std::size_t j = 0; j < d; ++j) grad_w[j] += g * row[j];
      grad_b += g;
    }
    const double scale = step_size / (std::sqrt(static_cast<double>(step)) *
                                      static_cast<double>(ds.n));
    for (std::size_t j = 0; j < d; ++j) m.w[j] -= scale * grad_w[j];
    m.intercept -= scale * grad_b;

    const double loss = pinball_loss(ds, m, tau);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("fit_linear_quantile: non-finite loss");
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = m;
    }
    if (step % checkpoint_every == 0) fit.loss_trace.push_back(best_loss);
  }
  fit.model = std::move(best);
  return fit;
}

// Ordinary least squares via normal equations with a small ridge term,
// solved by Cholesky factorization.
inline LinearModel fit_linear_mean(const Dataset& ds, double ridge = 1e-8) {
  if (ds.n == 0 || ds.y_real.size() != ds.n) {
    throw std::domain_error("fit_linear_mean: need a regression dataset");
  }
  const std::size_t d = ds.d;
  const std::size_t p = d + 1;  // intercept column folded in
  std::vector<double> a(p * p, 0.0);
  std::vector<double> rhs(p, 0.0);
  for (std::size_t i = 0; i < ds.n; ++i) {
    const double* row = ds.row(i);
    for (std::size_t j = 0; j < p; ++j) {
      const double xj = j < d ? row[j] : 1.0;
      rhs[j] += xj * ds.y_real[i];
      for (std::size_t l = j; l < p; ++l) {
        const double xl = l < d ? row[l] : 1.0;
        a[j * p + l] += xj * xl;
      }
    }
  }
  for (std::size_t j = 0; j < p; ++j) a[j * p + j] += ridge;

  // Cholesky: A = L L^T stored in the lower triangle.
  std::vector<double> chol(p * p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = j; i < p; ++i) {
      double sum = a[std::min(i, j) * p + std::max(i, j)];
      for (std::size_t l = 0; l < j; ++l) sum -= chol[i * p + l] * chol[j * p + l];
      if (i == j) {
        if (!(sum > 0.0)) {
          throw std::runtime_error("fit_linear_mean: singular normal equations");
        }
        chol[j * p + j] = std::sqrt(sum);
      } else {
        chol[i * p + j] = sum / chol[j * p + j];
      }
    }
  }
  // Forward then backward substitution.
  std::vector<double> z(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    double sum = rhs[i];
    for (std::size_t l = 0; l < i; ++l) sum -= chol[i * p + l] * z[l];
    z[i] = sum / chol[i * p + i];
  }
  std::vector<double> beta(p, 0.0);
  for (std::size_t ii = p; ii-- > 0;) {
    double sum = z[ii];
    for (std::size_t l = ii + 1; l < p; ++l) sum -= chol[l * p + ii] * beta[l];
    beta[ii] = sum / chol[ii * p + ii];
  }

  LinearModel m;
  m.w.assign(beta.begin(), beta.begin() + static_cast<std::ptrdiff_t>(d));
  m.intercept = beta[d];
  return m;
}

}  // namespace cpnoise
