// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numerical PD/CPD checks: Gram quadratic forms, sum-zero coefficient
// sampling, and the geometric search for the PSD-making shift constant.

#ifndef KERPLE_VERIFY_HPP
#define KERPLE_VERIFY_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kerple/kernels.hpp"

namespace kerple {

inline constexpr double kTolCpd = 1e-8;
inline constexpr double kTolPsd = 1e-8;

using KernelFn = std::function<double(double)>;  // univariate, of |x - x'|

inline KernelFn bias_function(const KernelSpec& spec) {
  validate(spec);
  return [spec](double d) { return eval_bias_real(spec, d); };
}

struct GramMatrix {
  std::vector<double> points;
  Eigen::MatrixXd entries;  // entries(i, j) = k(x_i, x_j), symmetric
};

inline GramMatrix build_gram(const KernelFn& kernel, const std::vector<double>& points) {
  if (points.empty()) throw std::invalid_argument("points must be nonempty");
  const int n = static_cast<int>(points.size());
  GramMatrix gram{points, Eigen::MatrixXd(n, n)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = kernel(std::abs(points[i] - points[j]));
      gram.entries(i, j) = v;
      gram.entries(j, i) = v;
    }
  return gram;
}

inline GramMatrix build_gram(const KernelSpec& spec, const std::vector<double>& points) {
  return build_gram(bias_function(spec), points);
}

inline std::vector<double> integer_grid(int n) {
  std::vector<double> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = i;
  return pts;
}

// c^T K c as the literal double sum.
inline double quadratic_form(const GramMatrix& gram, const std::vector<double>& coeffs) {
  const std::size_t n = gram.points.size();
  if (coeffs.size() != n)
    throw std::invalid_argument("coefficient count does not match Gram size");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) acc += coeffs[i] * coeffs[j] * gram.entries(i, j);
  return acc;
}

struct CpdCheckResult {
  bool pass = false;
  double worst_value = 0.0;  // minimum quadratic form seen
  int trials = 0;
};

// Samples sum-zero coefficient vectors (standard normal, mean-subtracted) and
// evaluates the quadratic form; the kernel passes when no trial dips below
// -tolerance.
inline CpdCheckResult check_cpd(const KernelFn& kernel, const std::vector<double>& points,
                                int trials, std::uint64_t rng_seed,
                                double tolerance = kTolCpd) {
  if (points.size() < 2) throw std::invalid_argument("need at least 2 points");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const GramMatrix gram = build_gram(kernel, points);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = points.size();
  std::vector<double> c(n);
  double worst = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    double mean = 0.0;
    for (auto& ci : c) {
      ci = normal(rng);
      mean += ci;
    }
    mean /= static_cast<double>(n);
    for (auto& ci : c) ci -= mean;
    worst = std::min(worst, quadratic_form(gram, c));
  }
  return {worst >= -tolerance, worst, trials};
}

inline CpdCheckResult check_cpd(const KernelSpec& spec, const std::vector<double>& points,
                                int trials, std::uint64_t rng_seed,
                                double tolerance = kTolCpd) {
  return check_cpd(bias_function(spec), points, trials, rng_seed, tolerance);
}

// Unconstrained-coefficient variant of the same sweep (tests plain PD).
inline CpdCheckResult check_pd(const KernelFn& kernel, const std::vector<double>& points,
                               int trials, std::uint64_t rng_seed,
                               double tolerance = kTolPsd) {
  if (points.empty()) throw std::invalid_argument("points must be nonempty");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  const GramMatrix gram = build_gram(kernel, points);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> c(points.size());
  double worst = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    for (auto& ci : c) ci = normal(rng);
    worst = std::min(worst, quadratic_form(gram, c));
  }
  return {worst >= -tolerance, worst, trials};
}

inline double min_eigenvalue(const GramMatrix& gram) {
  const auto& k = gram.entries;
  if (k.rows() != k.cols()) throw std::invalid_argument("Gram matrix must be square");
  if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + k.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("Gram matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

struct ShiftSearchResult {
  double constant = 0.0;
  std::vector<std::pair<double, double>> probes;  // (c, min eigenvalue) in visit order
  std::vector<double> points;
};

// Geometric search c = 1, 2, 4, ... for the smallest probed shift making
// [c + k~(x_i, x_j)] positive semidefinite on the given grid. The certified c
// is relative to this grid only.
inline ShiftSearchResult shift_search(const KernelFn& kernel,
                                      const std::vector<double>& points,
                                      double tolerance = kTolPsd) {
  if (points.empty()) throw std::invalid_argument("points must be nonempty");
  GramMatrix gram = build_gram(kernel, points);
  const int n = static_cast<int>(points.size());
  ShiftSearchResult result;
  result.points = points;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, n);
  for (double c = 1.0; c <= std::exp2(64); c *= 2.0) {
    GramMatrix shifted{points, gram.entries + c * ones};
    const double lambda = min_eigenvalue(shifted);
    result.probes.emplace_back(c, lambda);
    if (lambda >= -tolerance) {
      result.constant = c;
      return result;
    }
  }
  throw std::runtime_error(
      "shift_search: no c up to 2^64 makes the Gram matrix PSD "
      "(kernel is likely not CPD on this grid, or the tolerance is too tight)");
}

inline ShiftSearchResult shift_search(const KernelSpec& spec,
                                      const std::vector<double>& points,
                                      double tolerance = kTolPsd) {
  if (!is_cpd_bias(spec.variant))
    throw std::invalid_argument("shift_search expects a CPD bias variant");
  return shift_search(bias_function(spec), points, tolerance);
}

// Closure transforms (CPD in, CPD out) for kernels with range (-inf, 0].
inline KernelFn cpd_alpha_power(KernelFn kernel, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0, 1)");
  return [kernel = std::move(kernel), alpha](double d) {
    return -std::pow(-kernel(d), alpha);
  };
}

inline KernelFn cpd_log1m(KernelFn kernel) {
  return [kernel = std::move(kernel)](double d) { return -std::log1p(-kernel(d)); };
}

}  // namespace kerple

#endif  // KERPLE_VERIFY_HPP
