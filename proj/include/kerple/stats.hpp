// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Paired two-sided t-test with the p value computed from the regularized
// incomplete beta function (continued-fraction evaluation, Numerical Recipes
// style), so no statistical library is needed.

#ifndef KERPLE_STATS_HPP
#define KERPLE_STATS_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace kerple {

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("betacf: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta function I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a, b must be > 0");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // Use the symmetry relation to keep the continued fraction convergent.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// Two-sided p value of a t statistic with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw std::invalid_argument("degrees of freedom must be > 0");
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

enum class TTestVerdict { significant, not_significant, degenerate };

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  TTestVerdict verdict = TTestVerdict::not_significant;
};

inline const char* verdict_name(TTestVerdict v) {
  switch (v) {
    case TTestVerdict::significant: return "significant";
    case TTestVerdict::not_significant: return "not_significant";
    case TTestVerdict::degenerate: return "degenerate";
  }
  throw std::logic_error("unknown verdict");
}

// Paired two-sided t-test on equal-length samples. Zero-variance differences
// are reported as degenerate: p = 1 when every difference is 0, p = 0
// otherwise.
inline TTestResult paired_ttest(const std::vector<double>& samples_a,
                                const std::vector<double>& samples_b,
                                double alpha = 0.05) {
  if (samples_a.size() != samples_b.size())
    throw std::invalid_argument("paired_ttest: sample sizes differ");
  const std::size_t n = samples_a.size();
  if (n < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += samples_a[i] - samples_b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = samples_a[i] - samples_b[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  TTestResult result;
  if (var == 0.0) {
    result.verdict = TTestVerdict::degenerate;
    result.p = mean == 0.0 ? 1.0 : 0.0;
    result.t = mean == 0.0 ? 0.0 : std::copysign(
        std::numeric_limits<double>::infinity(), mean);
    return result;
  }
  result.t = mean / std::sqrt(var / static_cast<double>(n));
  result.p = student_t_two_sided_p(result.t, static_cast<double>(n - 1));
  result.verdict =
      result.p < alpha ? TTestVerdict::significant : TTestVerdict::not_significant;
  return result;
}

}  // namespace kerple

#endif  // KERPLE_STATS_HPP
