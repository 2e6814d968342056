#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpnoise/errors.hpp"
#include "cpnoise/losses.hpp"
#include "cpnoise/rng.hpp"

namespace cpnoise {

enum class NoiseKind {
  none,
  flip,
  uniform_flip,
  confusion,
  rare_to_frequent,
  additive,
  contractive,
  dispersive,
  vector_flip,
  adversarial,  // attack selected separately via AdversarialKind
};

enum class AdditiveDist { gauss, t1, gumbel_normalized, abs_t1 };

enum class VectorMode { independent, dependent, partial };

enum class AdversarialKind { none, indicator, w2r, optimal, mfc };

// Axis-aligned box of grid cells, [r0, r1) x [c0, c1).
struct Rect {
  std::size_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;

  bool valid_for(std::size_t rows, std::size_t cols) const {
    return r0 < r1 && c0 < c1 && r1 <= rows && c1 <= cols;
  }
};

using Matrix = std::vector<std::vector<double>>;

inline void validate_row_stochastic(const Matrix& t, double tol = 1e-9) {
  for (const auto& row : t) {
    if (row.size() != t.size()) {
      throw std::invalid_argument("transition matrix must be square");
    }
    double sum = 0.0;
    for (double p : row) {
      if (p < -tol) throw std::invalid_argument("negative transition entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument("transition row does not sum to 1");
    }
  }
}

// Parsed corruption description; one spec drives both the sample-level
// transforms below and the analytic channel used by the oracle model.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double epsilon = 0.0;              // flip probability / budget
  std::optional<Matrix> transition;  // confusion channel
  AdditiveDist additive_dist = AdditiveDist::gauss;
  double additive_c = 0.0;           // additive magnitude
  VectorMode vector_mode = VectorMode::independent;
  double beta = 0.0;                 // per-element flip rate
  std::vector<Rect> rects;           // geometry for dependent/partial modes
  AdversarialKind adversarial = AdversarialKind::none;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
      throw config_error("noise: epsilon must be in [0,1)");
    }
    if (additive_c < 0.0) throw config_error("noise: additive c must be >= 0");
    if (transition) validate_row_stochastic(*transition);
    if (kind == NoiseKind::vector_flip && !(beta >= 0.0 && beta <= 1.0)) {
      throw config_error("noise: beta must be in [0,1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Classification corruptions
// ---------------------------------------------------------------------------

// With probability epsilon, replace the label by a uniform draw over all K
// classes (which may return the original label).
inline int apply_flip(int y, int k, double epsilon, Rng& rng) {
  if (k < 2) throw std::domain_error("apply_flip: need at least 2 classes");
  if (y < 0 || y >= k) throw std::out_of_range("apply_flip: label");
  if (rng.uniform() < epsilon) {
    return static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  }
  return y;
}

// With probability epsilon, replace the label by a uniform draw over the
// K-1 labels different from it.
inline int apply_uniform_flip(int y, int k, double epsilon, Rng& rng) {
  if (k < 2) throw std::domain_error("apply_uniform_flip: need at least 2 classes");
  if (y < 0 || y >= k) throw std::out_of_range("apply_uniform_flip: label");
  if (rng.uniform() < epsilon) {
    auto draw = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
    return draw >= y ? draw + 1 : draw;
  }
  return y;
}

// Sample the corrupted label from row y of a row-stochastic matrix.
inline int apply_confusion(int y, const Matrix& t, Rng& rng) {
  if (y < 0 || static_cast<std::size_t>(y) >= t.size()) {
    throw std::out_of_range("apply_confusion: label");
  }
  const auto& row = t[static_cast<std::size_t>(y)];
  double sum = 0.0;
  for (double p : row) sum += p;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("apply_confusion: row not stochastic");
  }
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    acc += row[j];
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(row.size()) - 1;
}

// Turn oracle confusion counts into a transition matrix whose off-diagonal
// mass is proportional to the counts. A single global factor scales all
// rows so that the total flipping probability under the class marginal
// equals epsilon; per-row rates vary. The marginal defaults to the row sums
// of the counts (the class frequencies the oracle was evaluated on).
inline Matrix build_confusion_from_oracle(const Matrix& counts, double epsilon,
                                          std::vector<double> marginals = {}) {
  const std::size_t k = counts.size();
  if (k == 0) throw std::invalid_argument("build_confusion_from_oracle: empty");
  for (const auto& row : counts) {
    if (row.size() != k) {
      throw std::invalid_argument("build_confusion_from_oracle: not square");
    }
    for (double c : row) {
      if (c < 0.0) {
        throw std::invalid_argument("build_confusion_from_oracle: negative count");
      }
    }
  }
  if (marginals.empty()) {
    marginals.assign(k, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (double c : counts[i]) marginals[i] += c;
      total += marginals[i];
    }
    if (total > 0.0) {
      for (double& m : marginals) m /= total;
    } else {
      std::fill(marginals.begin(), marginals.end(), 1.0 / static_cast<double>(k));
    }
  }
  if (marginals.size() != k) {
    throw std::invalid_argument("build_confusion_from_oracle: bad marginals");
  }

  // Expected flip mass if every off-diagonal count were taken at weight 1.
  double base_mass = 0.0;
  std::vector<double> row_off(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) row_off[i] += counts[i][j];
    }
    base_mass += marginals[i] * row_off[i];
  }

  Matrix t(k, std::vector<double>(k, 0.0));
  if (base_mass <= 0.0 || epsilon == 0.0) {
    for (std::size_t i = 0; i < k; ++i) t[i][i] = 1.0;
    return t;
  }
  const double factor = epsilon / base_mass;
  for (std::size_t i = 0; i < k; ++i) {
    if (factor * row_off[i] > 1.0 + 1e-12) {
      throw infeasibility_error(
          "build_confusion_from_oracle: epsilon too large for row " +
          std::to_string(i));
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) t[i][j] = factor * counts[i][j];
    }
    t[i][i] = 1.0 - factor * row_off[i];
  }
  return t;
}

// Deterministic flip schedule of the rare-to-frequent corruption, expressed
// as per-class flip rates toward the most frequent class. Classes are
// consumed in ascending order of marginal mass until the budget is met.
struct RareToFrequentPlan {
  std::vector<double> flip_rate;  // per class, probability of moving
  int target = 0;                 // most frequent class
  double achieved = 0.0;          // total flip mass actually scheduled
};

inline RareToFrequentPlan rare_to_frequent_plan(
    const std::vector<double>& marginals, double epsilon) {
  const std::size_t k = marginals.size();
  if (k < 2) throw std::domain_error("rare_to_frequent: need >= 2 classes");
  RareToFrequentPlan plan;
  plan.flip_rate.assign(k, 0.0);
  plan.target = static_cast<int>(
      std::max_element(marginals.begin(), marginals.end()) - marginals.begin());

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return marginals[a] < marginals[b];
  });

  double remaining = epsilon;
  for (std::size_t idx : order) {
    if (static_cast<int>(idx) == plan.target || remaining <= 0.0) continue;
    const double mass = marginals[idx];
    if (mass <= 0.0) continue;
    const double take = std::min(mass, remaining);
    plan.flip_rate[idx] = take / mass;
    plan.achieved += take;
    remaining -= take;
  }
  return plan;
}

inline Matrix rare_to_frequent_transition(const std::vector<double>& marginals,
                                          double epsilon) {
  const auto plan = rare_to_frequent_plan(marginals, epsilon);
  const std::size_t k = marginals.size();
  Matrix t(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    t[i][i] = 1.0 - plan.flip_rate[i];
    t[i][static_cast<std::size_t>(plan.target)] += plan.flip_rate[i];
  }
  return t;
}

struct CorruptedLabels {
  std::vector<int> labels;
  double achieved_rate = 0.0;  // empirical fraction of changed labels
};

// Flip labels of the least frequent classes to the most frequent one until
// an epsilon fraction of all labels has moved. Within a class, the flipped
// subset is chosen at random. If epsilon exceeds the flippable mass,
// everything flippable moves and the achieved rate records the shortfall.
inline CorruptedLabels apply_rare_to_frequent(std::vector<int> labels,
                                              const std::vector<double>& marginals,
                                              double epsilon, Rng& rng) {
  const std::size_t k = marginals.size();
  const auto plan = rare_to_frequent_plan(marginals, epsilon);
  const std::size_t n = labels.size();
  auto budget = static_cast<std::size_t>(
      std::llround(epsilon * static_cast<double>(n)));

  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= k) throw std::out_of_range("apply_rare_to_frequent: label");
    by_class[c].push_back(i);
  }

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return marginals[a] < marginals[b];
  });

  std::size_t flipped = 0;
  for (std::size_t cls : order) {
    if (static_cast<int>(cls) == plan.target || flipped >= budget) continue;
    auto& members = by_class[cls];
    const std::size_t take = std::min(members.size(), budget - flipped);
    // Partial Fisher-Yates: pick `take` members uniformly at random.
    for (std::size_t j = 0; j < take; ++j) {
      const std::size_t pick =
          j + static_cast<std::size_t>(rng.below(members.size() - j));
      std::swap(members[j], members[pick]);
      labels[members[j]] = plan.target;
    }
    flipped += take;
  }

  CorruptedLabels out;
  out.labels = std::move(labels);
  out.achieved_rate = n == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Regression corruptions
// ---------------------------------------------------------------------------

// Standard Gumbel moments, used to normalize to zero mean and unit variance.
inline constexpr double kEulerMascheroni = 0.5772156649015328606;
inline const double kGumbelSd = Rng::pi() / std::sqrt(6.0);

inline double sample_additive_noise(AdditiveDist dist, Rng& rng) {
  switch (dist) {
    case AdditiveDist::gauss: return rng.normal();
    case AdditiveDist::t1: return rng.student_t1();
    case AdditiveDist::gumbel_normalized:
      return (rng.gumbel() - kEulerMascheroni) / kGumbelSd;
    case AdditiveDist::abs_t1: return std::abs(rng.student_t1());
  }
  throw config_error("apply_additive: unknown distribution");
}

inline double apply_additive(double y, AdditiveDist dist, double c, Rng& rng) {
  if (c < 0.0) throw config_error("apply_additive: c must be >= 0");
  if (c == 0.0) return y;
  return y + c * sample_additive_noise(dist, rng);
}

// Pull every batch element toward the batch mean by an independent
// Unif[0, 0.5] fraction. The mean is taken over the batch actually being
// corrupted. `fixed_u` freezes the uniform draw for exactness tests.
inline std::vector<double> apply_contractive(std::vector<double> batch, Rng& rng,
                                             std::optional<double> fixed_u = {}) {
  if (batch.empty()) throw std::domain_error("apply_contractive: empty batch");
  const double mean =
      std::accumulate(batch.begin(), batch.end(), 0.0) / static_cast<double>(batch.size());
  for (double& y : batch) {
    const double u = fixed_u ? *fixed_u : rng.uniform(0.0, 0.5);
    y -= (y - mean) * u;
  }
  return batch;
}

// Push every batch element away from the batch mean; the mirror image of
// apply_contractive.
inline std::vector<double> apply_dispersive(std::vector<double> batch, Rng& rng,
                                            std::optional<double> fixed_u = {}) {
  if (batch.empty()) throw std::domain_error("apply_dispersive: empty batch");
  const double mean =
      std::accumulate(batch.begin(), batch.end(), 0.0) / static_cast<double>(batch.size());
  for (double& y : batch) {
    const double u = fixed_u ? *fixed_u : rng.uniform(0.0, 0.5);
    y += (y - mean) * u;
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Multi-label / segmentation corruption
// ---------------------------------------------------------------------------

struct BinaryGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  BinaryMask v;

  BinaryGrid() = default;
  BinaryGrid(std::size_t r, std::size_t c, std::uint8_t fill = 0)
      : rows(r), cols(c), v(r * c, fill) {}
  std::uint8_t& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline void flip_rect(BinaryGrid& g, const Rect& rect) {
  for (std::size_t r = rect.r0; r < rect.r1; ++r) {
    for (std::size_t c = rect.c0; c < rect.c1; ++c) {
      g.at(r, c) ^= 1;
    }
  }
}

// Default geometry for the dependent/partial modes: two axis-aligned boxes
// in opposite corners, each covering about 10% of the grid area.
inline std::vector<Rect> default_rects(std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 2) {
    throw std::invalid_argument("default_rects: grid too small");
  }
  auto side = [](std::size_t extent) {
    const auto s = static_cast<std::size_t>(
        std::lround(std::sqrt(0.1) * static_cast<double>(extent)));
    return std::max<std::size_t>(1, std::min(extent, s));
  };
  const std::size_t h = side(rows);
  const std::size_t w = side(cols);
  return {Rect{0, 0, h, w}, Rect{rows - h, cols - w, rows, cols}};
}

// Vector-flip noise over a binary matrix (a multi-label vector is a 1 x K
// grid). independent: each entry flips with probability beta. dependent:
// additionally each configured rectangle flips entirely with probability
// beta. partial: only the first configured rectangle flips with probability
// beta and nothing else changes.
inline BinaryGrid apply_vector_flip(BinaryGrid y, VectorMode mode, double beta,
                                    const std::vector<Rect>& rects, Rng& rng) {
  for (const Rect& r : rects) {
    if (!r.valid_for(y.rows, y.cols)) {
      throw std::invalid_argument("apply_vector_flip: rectangle out of bounds");
    }
  }
  switch (mode) {
    case VectorMode::independent:
      for (auto& bit : y.v) {
        if (rng.uniform() < beta) bit ^= 1;
      }
      return y;
    case VectorMode::dependent: {
      if (rects.size() < 2) {
        throw std::invalid_argument("apply_vector_flip: dependent mode needs two rectangles");
      }
      for (auto& bit : y.v) {
        if (rng.uniform() < beta) bit ^= 1;
      }
      for (std::size_t i = 0; i < 2; ++i) {
        if (rng.uniform() < beta) flip_rect(y, rects[i]);
      }
      return y;
    }
    case VectorMode::partial: {
      if (rects.empty()) {
        throw std::invalid_argument("apply_vector_flip: partial mode needs a rectangle");
      }
      if (rng.uniform() < beta) flip_rect(y, rects[0]);
      return y;
    }
  }
  throw config_error("apply_vector_flip: unknown mode");
}

// ---------------------------------------------------------------------------
// Enum parsing for config files
// ---------------------------------------------------------------------------

inline NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "flip") return NoiseKind::flip;
  if (s == "uniform-flip") return NoiseKind::uniform_flip;
  if (s == "confusion") return NoiseKind::confusion;
  if (s == "rare-to-frequent") return NoiseKind::rare_to_frequent;
  if (s == "additive") return NoiseKind::additive;
  if (s == "contractive") return NoiseKind::contractive;
  if (s == "dispersive") return NoiseKind::dispersive;
  if (s == "vector-flip") return NoiseKind::vector_flip;
  if (s.rfind("adversarial:", 0) == 0) return NoiseKind::adversarial;
  throw config_error("unknown noise kind: " + s);
}

inline AdditiveDist parse_additive_dist(const std::string& s) {
  if (s == "gauss") return AdditiveDist::gauss;
  if (s == "t1") return AdditiveDist::t1;
  if (s == "gumbel-normalized") return AdditiveDist::gumbel_normalized;
  if (s == "abs-t1") return AdditiveDist::abs_t1;
  throw config_error("unknown additive distribution: " + s);
}

inline VectorMode parse_vector_mode(const std::string& s) {
  if (s == "independent") return VectorMode::independent;
  if (s == "dependent") return VectorMode::dependent;
  if (s == "partial") return VectorMode::partial;
  throw config_error("unknown vector-flip mode: " + s);
}

inline AdversarialKind parse_adversarial_kind(const std::string& s) {
  if (s == "adversarial:prop3") return AdversarialKind::indicator;
  if (s == "adversarial:w2r") return AdversarialKind::w2r;
  if (s == "adversarial:optimal") return AdversarialKind::optimal;
  if (s == "adversarial:mfc") return AdversarialKind::mfc;
  throw config_error("unknown adversarial attack: " + s);
}

}  // namespace cpnoise
