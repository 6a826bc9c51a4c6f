// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dropping {

struct CurveSample {
  std::size_t iteration = 0;
  double error = 0.0;
};

/// Dev-error samples recorded online; iterations strictly increase.
class ErrorCurve {
 public:
  void append(std::size_t iteration, double error);
  const std::vector<CurveSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::vector<double> xs() const;
  std::vector<double> ys() const;

 private:
  std::vector<CurveSample> samples_;
};

enum class SmootherKind { moving_average, gaussian_kernel, lowess, spline };

SmootherKind parse_smoother_kind(const std::string& s);
std::string to_string(SmootherKind k);

struct SmootherConfig {
  SmootherKind kind = SmootherKind::spline;
  /// Moving-average window, in evaluations.
  std::size_t window = 5;
  /// Gaussian kernel bandwidth, in iterations (two evaluation intervals at the default cadence).
  double bandwidth = 40.0;
  double lowess_fraction = 0.5;
  std::size_t knots = 8;
  double lambda = 1.0;
  /// Slope update cadence U, in iterations.
  std::size_t update_interval = 100;
  /// Length n of the trailing subinterval the slope is averaged over; 0 means U.
  std::size_t subinterval = 0;

  void validate() const;
  std::size_t slope_span() const { return subinterval ? subinterval : update_interval; }
};

/// Mean of the last k first differences of the raw curve, each divided by its iteration gap.
double moving_avg_slope(const ErrorCurve& curve, std::size_t k);

/// Nadaraya-Watson estimate with weights exp(-(x - x_i)^2 / 2b^2), evaluated at `at`.
std::vector<double> gaussian_kernel_smooth(const std::vector<double>& xs, const std::vector<double>& ys,
                                           double bandwidth, const std::vector<double>& at);
inline std::vector<double> gaussian_kernel_smooth(const std::vector<double>& xs, const std::vector<double>& ys,
                                                  double bandwidth) {
  return gaussian_kernel_smooth(xs, ys, bandwidth, xs);
}

/// Single-pass LOWESS: local linear fit at each sample over the ceil(fraction * n)
/// nearest samples with tricube weights (1 - |d/h|^3)^3, h the distance to the
/// farthest of them. Falls back to the local weighted mean when the local design is degenerate.
std::vector<double> lowess_smooth(const std::vector<double>& xs, const std::vector<double>& ys, double fraction);

/// Cubic B-spline fit with a ridge penalty on the coefficients.
class SplineFit {
 public:
  SplineFit() = default;
  SplineFit(std::vector<double> knots, std::vector<double> theta, double lambda);

  /// Interior and boundary knots, uniform over [first, last] sample position.
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& theta() const { return theta_; }
  double lambda() const { return lambda_; }
  /// Number of basis functions J = knots + 2.
  std::size_t basis_size() const { return theta_.size(); }

  std::vector<double> basis(double x) const;
  std::vector<double> basis_derivative(double x) const;
  double value(double x) const;
  double derivative(double x) const;

 private:
  std::vector<double> knots_;
  std::vector<double> augmented_;
  std::vector<double> theta_;
  double lambda_ = 0.0;
};

/// Values of the J = knot_count + 2 clamped cubic B-splines on uniform knots over [lo, hi] at x.
std::vector<double> cubic_bspline_basis(double lo, double hi, std::size_t knot_count, double x);

/// Solves (Psi^T Psi + lambda I) theta = Psi^T y with knot_count uniform knots over [x_0, x_{n-1}].
/// Throws RankError when the system is singular (lambda = 0 with too few distinct samples).
SplineFit fit_smoothing_spline(const std::vector<double>& xs, const std::vector<double>& ys, std::size_t knot_count,
                               double lambda);

/// Mean slope of the smoothed curve over the trailing subinterval, in error per iteration.
/// Throws StateError when the curve has too few samples for the configured smoother.
double smoothed_slope(const ErrorCurve& curve, const SmootherConfig& config);

/// smoothed_slope at iterations that are a positive multiple of U with enough samples; nullopt otherwise.
std::optional<double> estimate_delta(const ErrorCurve& curve, const SmootherConfig& config, std::size_t iteration);

/// Smoothed values of the curve at its own sample points under the configured smoother.
/// The moving-average smoother is a trailing mean over `window` samples.
std::vector<double> smooth_curve(const ErrorCurve& curve, const SmootherConfig& config);

}  // namespace dropping
