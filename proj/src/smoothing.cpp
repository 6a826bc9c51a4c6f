// SPDX-License-Identifier: Apache-2.0
#include "dropping/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "dropping/errors.hpp"

namespace dropping {

void ErrorCurve::append(std::size_t iteration, double error) {
  if (!std::isfinite(error) || error < 0.0) throw InputError("error curve: errors must be finite and non-negative");
  if (!samples_.empty() && iteration <= samples_.back().iteration) {
    throw InputError("error curve: iterations must be strictly increasing");
  }
  samples_.push_back({iteration, error});
}

std::vector<double> ErrorCurve::xs() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(static_cast<double>(s.iteration));
  return out;
}

std::vector<double> ErrorCurve::ys() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.error);
  return out;
}

SmootherKind parse_smoother_kind(const std::string& s) {
  if (s == "moving_average") return SmootherKind::moving_average;
  if (s == "gaussian_kernel") return SmootherKind::gaussian_kernel;
  if (s == "lowess") return SmootherKind::lowess;
  if (s == "spline") return SmootherKind::spline;
  throw ConfigError("unknown smoother '" + s + "' (expected moving_average|gaussian_kernel|lowess|spline)");
}

std::string to_string(SmootherKind k) {
  switch (k) {
    case SmootherKind::moving_average: return "moving_average";
    case SmootherKind::gaussian_kernel: return "gaussian_kernel";
    case SmootherKind::lowess: return "lowess";
    case SmootherKind::spline: return "spline";
  }
  return "spline";
}

void SmootherConfig::validate() const {
  if (window == 0) throw ConfigError("smoother: window must be positive");
  if (!(bandwidth > 0.0)) throw ConfigError("smoother: bandwidth must be positive");
  if (!(lowess_fraction > 0.0 && lowess_fraction <= 1.0)) throw ConfigError("smoother: lowess fraction must lie in (0, 1]");
  if (knots < 2) throw ConfigError("smoother: at least two knots required");
  if (!(lambda >= 0.0)) throw ConfigError("smoother: lambda must be non-negative");
  if (update_interval == 0) throw ConfigError("smoother: update interval must be at least 1");
}

double moving_avg_slope(const ErrorCurve& curve, std::size_t k) {
  if (k == 0) throw ConfigError("moving_avg_slope: window must be positive");
  const auto& s = curve.samples();
  if (s.size() < k + 1) {
    throw StateError("moving_avg_slope: need " + std::to_string(k + 1) + " samples, have " + std::to_string(s.size()));
  }
  double total = 0.0;
  for (std::size_t i = s.size() - k; i < s.size(); ++i) {
    total += (s[i].error - s[i - 1].error) / static_cast<double>(s[i].iteration - s[i - 1].iteration);
  }
  return total / static_cast<double>(k);
}

std::vector<double> gaussian_kernel_smooth(const std::vector<double>& xs, const std::vector<double>& ys,
                                           double bandwidth, const std::vector<double>& at) {
  if (!(bandwidth > 0.0)) throw ConfigError("gaussian_kernel_smooth: bandwidth must be positive");
  if (xs.empty() || xs.size() != ys.size()) throw InputError("gaussian_kernel_smooth: need matching, non-empty samples");
  const double denom = 2.0 * bandwidth * bandwidth;
  std::vector<double> out;
  out.reserve(at.size());
  for (double x0 : at) {
    // Shift exponents by the nearest sample so at least one weight is exactly 1.
    double nearest = std::numeric_limits<double>::infinity();
    for (double x : xs) nearest = std::min(nearest, (x0 - x) * (x0 - x));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = x0 - xs[i];
      const double w = std::exp(-(d * d - nearest) / denom);
      num += w * ys[i];
      den += w;
    }
    out.push_back(num / den);
  }
  return out;
}

std::vector<double> lowess_smooth(const std::vector<double>& xs, const std::vector<double>& ys, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("lowess_smooth: fraction must lie in (0, 1]");
  const std::size_t n = xs.size();
  if (n != ys.size()) throw InputError("lowess_smooth: xs and ys differ in length");
  if (n < 3) throw StateError("lowess_smooth: need at least 3 samples");
  const auto q = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))), 2, n);

  std::vector<double> out(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = std::fabs(xs[j] - xs[i]);
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q - 1), sorted.end());
    const double h = sorted[q - 1];

    double sw = 0.0, sx = 0.0, sy = 0.0;
    std::vector<double> w(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (h > 0.0) {
        const double u = dist[j] / h;
        if (u < 1.0) {
          const double t = 1.0 - u * u * u;
          w[j] = t * t * t;
        }
      } else if (dist[j] == 0.0) {
        w[j] = 1.0;
      }
      sw += w[j];
      sx += w[j] * xs[j];
      sy += w[j] * ys[j];
    }
    const double xbar = sx / sw;
    const double ybar = sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sxx += w[j] * (xs[j] - xbar) * (xs[j] - xbar);
      sxy += w[j] * (xs[j] - xbar) * (ys[j] - ybar);
    }
    const double range = xs.back() - xs.front();
    if (sxx <= 1e-12 * sw * std::max(range * range, 1.0)) {
      out[i] = ybar;
    } else {
      out[i] = ybar + (sxy / sxx) * (xs[i] - xbar);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// B-splines

namespace {

std::vector<double> uniform_knots(double lo, double hi, std::size_t count) {
  std::vector<double> k(count);
  for (std::size_t i = 0; i < count; ++i) {
    k[i] = i + 1 == count ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return k;
}

// Clamped cubic knot vector: boundary knots repeated four times.
std::vector<double> augment(const std::vector<double>& knots) {
  std::vector<double> a;
  a.insert(a.end(), 3, knots.front());
  a.insert(a.end(), knots.begin(), knots.end());
  a.insert(a.end(), 3, knots.back());
  return a;
}

// Values of all B-splines of the given degree at x (Cox-de Boor, triangular table).
std::vector<double> bspline_values(const std::vector<double>& t, std::size_t degree, double x) {
  const std::size_t count = t.size() - degree - 1;
  // Locate the span; the right boundary belongs to the last non-empty span.
  std::size_t span = degree;
  const std::size_t last = t.size() - degree - 2;
  if (x >= t[last + 1]) {
    span = last;
    while (span > degree && t[span] == t[span + 1]) --span;
  } else {
    while (span < last && x >= t[span + 1]) ++span;
  }
  std::vector<double> n(t.size() - 1, 0.0);
  n[span] = 1.0;
  for (std::size_t d = 1; d <= degree; ++d) {
    for (std::size_t i = span - d; i <= span; ++i) {
      double v = 0.0;
      const double left = t[i + d] - t[i];
      if (left > 0.0) v += (x - t[i]) / left * n[i];
      const double right = t[i + d + 1] - t[i + 1];
      if (right > 0.0) v += (t[i + d + 1] - x) / right * n[i + 1];
      n[i] = v;
    }
  }
  n.resize(count);
  return n;
}

}  // namespace

std::vector<double> cubic_bspline_basis(double lo, double hi, std::size_t knot_count, double x) {
  if (knot_count < 2 || !(hi > lo)) throw ConfigError("cubic_bspline_basis: need >= 2 knots over a non-empty interval");
  return bspline_values(augment(uniform_knots(lo, hi, knot_count)), 3, x);
}

SplineFit::SplineFit(std::vector<double> knots, std::vector<double> theta, double lambda)
    : knots_(std::move(knots)), augmented_(augment(knots_)), theta_(std::move(theta)), lambda_(lambda) {
  if (theta_.size() != knots_.size() + 2) throw ShapeError("SplineFit: need knots + 2 coefficients");
}

std::vector<double> SplineFit::basis(double x) const { return bspline_values(augmented_, 3, x); }

std::vector<double> SplineFit::basis_derivative(double x) const {
  // d/dx B_{i,3} = 3 (B_{i,2} / (t_{i+3} - t_i) - B_{i+1,2} / (t_{i+4} - t_{i+1}))
  const std::vector<double> low = bspline_values(augmented_, 2, x);
  const auto& t = augmented_;
  std::vector<double> d(theta_.size(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double a = t[i + 3] - t[i];
    const double b = t[i + 4] - t[i + 1];
    if (a > 0.0) d[i] += 3.0 * low[i] / a;
    if (b > 0.0) d[i] -= 3.0 * low[i + 1] / b;
  }
  return d;
}

double SplineFit::value(double x) const {
  const auto b = basis(x);
  return std::inner_product(b.begin(), b.end(), theta_.begin(), 0.0);
}

double SplineFit::derivative(double x) const {
  const auto b = basis_derivative(x);
  return std::inner_product(b.begin(), b.end(), theta_.begin(), 0.0);
}

SplineFit fit_smoothing_spline(const std::vector<double>& xs, const std::vector<double>& ys, std::size_t knot_count,
                               double lambda) {
  if (knot_count < 2) throw ConfigError("fit_smoothing_spline: at least two knots required");
  if (!(lambda >= 0.0)) throw ConfigError("fit_smoothing_spline: lambda must be non-negative");
  if (xs.size() != ys.size() || xs.size() < 2) throw InputError("fit_smoothing_spline: need >= 2 matching samples");
  const double lo = xs.front(), hi = xs.back();
  if (!(hi > lo)) throw InputError("fit_smoothing_spline: samples must span a non-empty interval");
  const std::vector<double> knots = uniform_knots(lo, hi, knot_count);
  const std::vector<double> aug = augment(knots);
  const std::size_t n = xs.size(), j = knot_count + 2;

  Eigen::MatrixXd psi(n, j);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = bspline_values(aug, 3, xs[i]);
    for (std::size_t c = 0; c < j; ++c) psi(i, c) = row[c];
  }
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd normal = psi.transpose() * psi;
  normal.diagonal().array() += lambda;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(normal);
  if (qr.rank() < static_cast<Eigen::Index>(j)) {
    throw RankError("fit_smoothing_spline: singular system with " + std::to_string(j) + " basis functions and " +
                    std::to_string(n) + " samples; increase lambda or reduce the knot count");
  }
  const Eigen::VectorXd theta = qr.solve(psi.transpose() * y);
  return SplineFit(knots, std::vector<double>(theta.data(), theta.data() + j), lambda);
}

// ---------------------------------------------------------------------------
// Slope estimation

namespace {

// Mean of consecutive slopes of (xs, smoothed) restricted to x >= from.
double trailing_slope(const std::vector<double>& xs, const std::vector<double>& smoothed, double from) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i - 1] < from) continue;
    total += (smoothed[i] - smoothed[i - 1]) / (xs[i] - xs[i - 1]);
    ++count;
  }
  if (count == 0) {
    // Subinterval shorter than the sampling gap: use the last segment.
    const std::size_t i = xs.size() - 1;
    return (smoothed[i] - smoothed[i - 1]) / (xs[i] - xs[i - 1]);
  }
  return total / static_cast<double>(count);
}

std::size_t min_samples(const SmootherConfig& c) {
  switch (c.kind) {
    case SmootherKind::moving_average: return c.window + 1;
    case SmootherKind::gaussian_kernel: return 2;
    case SmootherKind::lowess: return 3;
    case SmootherKind::spline: return c.knots + 2;
  }
  return 2;
}

}  // namespace

std::vector<double> smooth_curve(const ErrorCurve& curve, const SmootherConfig& config) {
  config.validate();
  const auto xs = curve.xs();
  const auto ys = curve.ys();
  if (xs.empty()) return {};
  switch (config.kind) {
    case SmootherKind::moving_average: {
      std::vector<double> out(ys.size());
      double run = 0.0;
      for (std::size_t i = 0; i < ys.size(); ++i) {
        run += ys[i];
        if (i >= config.window) run -= ys[i - config.window];
        out[i] = run / static_cast<double>(std::min(i + 1, config.window));
      }
      return out;
    }
    case SmootherKind::gaussian_kernel:
      return gaussian_kernel_smooth(xs, ys, config.bandwidth);
    case SmootherKind::lowess:
      if (xs.size() < 3) return ys;
      return lowess_smooth(xs, ys, config.lowess_fraction);
    case SmootherKind::spline: {
      if (xs.size() < config.knots + 2) return ys;
      const SplineFit fit = fit_smoothing_spline(xs, ys, config.knots, config.lambda);
      std::vector<double> out;
      for (double x : xs) out.push_back(fit.value(x));
      return out;
    }
  }
  return ys;
}

double smoothed_slope(const ErrorCurve& curve, const SmootherConfig& config) {
  config.validate();
  const std::size_t need = min_samples(config);
  if (curve.size() < need) {
    throw StateError("smoothed_slope: " + to_string(config.kind) + " needs " + std::to_string(need) +
                     " samples, have " + std::to_string(curve.size()));
  }
  const auto xs = curve.xs();
  const double end = xs.back();
  const double from = std::max(xs.front(), end - static_cast<double>(config.slope_span()));
  switch (config.kind) {
    case SmootherKind::moving_average:
      return moving_avg_slope(curve, config.window);
    case SmootherKind::spline: {
      const SplineFit fit = fit_smoothing_spline(xs, curve.ys(), config.knots, config.lambda);
      // Mean of the analytic derivative over [from, end], by the fundamental theorem of calculus.
      return (fit.value(end) - fit.value(from)) / (end - from);
    }
    case SmootherKind::gaussian_kernel:
    case SmootherKind::lowess:
      return trailing_slope(xs, smooth_curve(curve, config), from);
  }
  return 0.0;
}

std::optional<double> estimate_delta(const ErrorCurve& curve, const SmootherConfig& config, std::size_t iteration) {
  config.validate();
  if (iteration == 0 || iteration % config.update_interval != 0) return std::nullopt;
  if (curve.size() < min_samples(config)) return std::nullopt;
  return smoothed_slope(curve, config);
}

}  // namespace dropping
