#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cpnoise {

// Closed interval on the real line; +-inf endpoints mean the whole line.
struct RealInterval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double y) const { return lo <= y && y <= hi; }
  double length() const { return hi - lo; }
};

// Dense W x H matrix of reals (row-major).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), v(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  std::size_t size() const { return v.size(); }
};

// Per-pixel prediction intervals for a matrix response.
struct IntervalGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<RealInterval> v;

  IntervalGrid() = default;
  IntervalGrid(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c) {}
  RealInterval& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const RealInterval& at(std::size_t r, std::size_t c) const {
    return v[r * cols + c];
  }
  std::size_t size() const { return v.size(); }
};

// Binary mask over labels (multi-label vector or flattened segmentation map).
using BinaryMask = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline double miscoverage(bool covered) { return covered ? 0.0 : 1.0; }

// Label-set variant; `set` is sorted ascending.
inline double miscoverage(int y, const std::vector<int>& set) {
  return miscoverage(std::binary_search(set.begin(), set.end(), y));
}

inline double miscoverage(double y, const RealInterval& c) {
  return miscoverage(c.contains(y));
}

// Fraction of true positives missing from the prediction mask. Undefined
// (and rejected) for an empty positive set.
inline double fnr(const BinaryMask& y, const BinaryMask& c) {
  if (y.size() != c.size()) throw std::domain_error("fnr: size mismatch");
  std::size_t positives = 0;
  std::size_t caught = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i]) {
      ++positives;
      if (c[i]) ++caught;
    }
  }
  if (positives == 0) throw std::domain_error("fnr: empty positive set");
  return 1.0 - static_cast<double>(caught) / static_cast<double>(positives);
}

// Smoothed miscoverage parameters: d controls sharpness, c the exponent on
// the squared normalized offset. The base smooth loss is c = 1, d = 1.
struct SmoothLossParams {
  double c = 1.0;
  double d = 1.0;

  void validate() const {
    if (!(c > 0.0) || !(d > 0.0)) {
      throw std::domain_error("SmoothLossParams: c and d must be positive");
    }
  }
};

// Value of the parameterized smooth loss at an interval endpoint. The exact
// miscoverage indicator is recovered by thresholding the smooth loss at this
// value: 1{y not in [a,b]} = 1{L_sm(y) > h(d)}.
inline double h_of_d(double d) { return 2.0 / (1.0 + std::exp(-d)); }

inline double smooth_miscoverage_param(double y, double a, double b,
                                       const SmoothLossParams& params) {
  if (!(a < b)) throw std::domain_error("smooth_miscoverage: a >= b");
  params.validate();
  const double z = 2.0 * (y - a) / (b - a) - 1.0;
  return 2.0 / (1.0 + std::exp(-params.d * std::pow(z * z, params.c)));
}

// Base smooth approximation of the miscoverage loss. Note the range is
// [1, 2): the minimum at the interval center is 1, not 0, so target levels
// for this loss live on the [1, 2) scale.
inline double smooth_miscoverage(double y, double a, double b) {
  if (!(a < b)) throw std::domain_error("smooth_miscoverage: a >= b");
  const double z = 2.0 * (y - a) / (b - a) - 1.0;
  return 2.0 / (1.0 + std::exp(-(z * z)));
}

// min/max of d^2/dy^2 of the parameterized smooth loss over y, found by a
// bounded sweep. The window of +-3 interval widths is enough: the sigmoid
// saturates outside it and the second derivative decays to 0 there.
struct SecondDerivativeExtrema {
  double min_dd = 0.0;  // q
  double max_dd = 0.0;  // Q
};

inline SecondDerivativeExtrema second_derivative_extrema(
    double a, double b, const SmoothLossParams& params,
    std::size_t sweep_points = 10000) {
  if (!(a < b)) throw std::domain_error("second_derivative_extrema: a >= b");
  const double w = b - a;
  const double lo = a - 3.0 * w;
  const double hi = b + 3.0 * w;
  const double h = w * 1e-4;
  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sweep_points; ++i) {
    const double y =
        lo + (hi - lo) * static_cast<double>(i) / (sweep_points - 1);
    const double f0 = smooth_miscoverage_param(y, a, b, params);
    const double fp = smooth_miscoverage_param(y + h, a, b, params);
    const double fm = smooth_miscoverage_param(y - h, a, b, params);
    const double dd = (fp - 2.0 * f0 + fm) / (h * h);
    if (!std::isfinite(dd)) {
      throw std::runtime_error("second_derivative_extrema: non-finite value");
    }
    mn = std::min(mn, dd);
    mx = std::max(mx, dd);
  }
  return {mn, mx};
}

// Fraction of matrix entries not covered by their per-pixel interval.
inline double image_miscoverage(const Grid& y, const IntervalGrid& c) {
  if (y.rows != c.rows || y.cols != c.cols) {
    throw std::domain_error("image_miscoverage: shape mismatch");
  }
  if (y.size() == 0) throw std::domain_error("image_miscoverage: empty");
  std::size_t missed = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!c.v[i].contains(y.v[i])) ++missed;
  }
  return static_cast<double>(missed) / static_cast<double>(y.size());
}

// Consecutive-miscoverage counter: resets on coverage, else increments.
inline long miscoverage_counter(long prev, bool covered) {
  if (prev < 0) throw std::domain_error("miscoverage_counter: negative state");
  return covered ? 0 : prev + 1;
}

}  // namespace cpnoise
