// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kerple/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kerple/attention.hpp"

namespace kerple {
namespace {

TEST(QuadraticForm, TwoByTwoDirect) {
  // K = [[0, -1], [-1, 0]], c = (1, -1): c^T K c = 2.
  const auto gram = build_gram([](double d) { return -d; }, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(quadratic_form(gram, {1.0, -1.0}), 2.0);
}

TEST(BuildGram, SymmetricAndShiftInvariant) {
  const auto spec = make_spec(Variant::log, {0.5, 1.5});
  const auto gram = build_gram(spec, integer_grid(12));
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      EXPECT_DOUBLE_EQ(gram.entries(i, j), gram.entries(j, i));
      EXPECT_DOUBLE_EQ(gram.entries(i, j), eval_bias(spec, std::abs(i - j)));
    }
}

TEST(CheckCpd, TriangleKernelPasses) {
  // -|x - x'| is the classic CPD-but-not-PD kernel.
  const auto result = check_cpd([](double d) { return -d; }, integer_grid(16), 500, 42);
  EXPECT_TRUE(result.pass);
  EXPECT_GE(result.worst_value, -kTolCpd);
}

TEST(CheckCpd, TriangleKernelFailsPlainPd) {
  // Same kernel has a negative Gram eigenvalue, so unconstrained coefficients
  // expose it.
  const auto gram = build_gram([](double d) { return -d; }, {0.0, 1.0, 2.0});
  EXPECT_LT(min_eigenvalue(gram), -1e-6);
  const auto result = check_pd([](double d) { return -d; }, {0.0, 1.0, 2.0}, 500, 42);
  EXPECT_FALSE(result.pass);
}

TEST(CheckCpd, CpdFamilyOnGrid32) {
  const auto grid = integer_grid(32);
  for (double p : {0.5, 1.0, 1.5, 2.0}) {
    const auto result = check_cpd(make_spec(Variant::power, {1.0, p}), grid, 1000, 7);
    EXPECT_TRUE(result.pass) << "power p=" << p << " worst=" << result.worst_value;
  }
  const auto log_result = check_cpd(make_spec(Variant::log, {1.0, 1.0}), grid, 1000, 7);
  EXPECT_TRUE(log_result.pass);
}

TEST(CheckCpd, PowerAboveTwoFails) {
  for (double p : {2.5, 3.0}) {
    const auto fn = [p](double d) { return -std::pow(d, p); };
    const auto result = check_cpd(fn, integer_grid(32), 1000, 7);
    EXPECT_FALSE(result.pass) << "power p=" << p;
    EXPECT_LT(result.worst_value, -kTolCpd);
  }
}

TEST(CheckCpd, PdImpliesCpd) {
  // A PD kernel (Gaussian) must also pass the sum-zero check.
  const auto gauss = [](double d) { return std::exp(-0.1 * d * d); };
  EXPECT_TRUE(check_pd(gauss, integer_grid(16), 500, 3).pass);
  EXPECT_TRUE(check_cpd(gauss, integer_grid(16), 500, 3).pass);
}

TEST(CheckCpd, DeterministicInSeed) {
  const auto spec = make_spec(Variant::log, {0.5, 1.0});
  const auto a = check_cpd(spec, integer_grid(16), 200, 99);
  const auto b = check_cpd(spec, integer_grid(16), 200, 99);
  EXPECT_DOUBLE_EQ(a.worst_value, b.worst_value);
}

TEST(MinEigenvalue, TriangleGramSpectrum) {
  // Frozen spectrum of [[0,-1,-2],[-1,0,-1],[-2,-1,0]]: min eigenvalue
  // -1 - sqrt(3).
  const auto gram = build_gram([](double d) { return -d; }, {0.0, 1.0, 2.0});
  EXPECT_NEAR(min_eigenvalue(gram), -1.0 - std::sqrt(3.0), 1e-12);
}

TEST(MinEigenvalue, RejectsAsymmetric) {
  GramMatrix gram{{0.0, 1.0}, Eigen::MatrixXd(2, 2)};
  gram.entries << 0.0, 1.0, 2.0, 0.0;
  EXPECT_THROW(min_eigenvalue(gram), std::invalid_argument);
}

TEST(ShiftSearch, TriangleKernelOnThreePoints) {
  // c=1 already lifts the {0,1,2} triangle Gram to PSD (min eigenvalue 0).
  const auto result = shift_search([](double d) { return -d; }, {0.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(result.constant, 1.0);
  EXPECT_EQ(result.probes.size(), 1u);
  EXPECT_GE(result.probes.back().second, -kTolPsd);
}

TEST(ShiftSearch, ProbesAreDoublingAndFinalPsd) {
  const auto spec = make_spec(Variant::power, {1.0, 1.5});
  const auto result = shift_search(spec, integer_grid(48));
  for (std::size_t i = 0; i < result.probes.size(); ++i)
    EXPECT_DOUBLE_EQ(result.probes[i].first, std::exp2(static_cast<double>(i)));
  EXPECT_GE(result.probes.back().second, -kTolPsd);
  if (result.probes.size() > 1)
    EXPECT_LT(result.probes[result.probes.size() - 2].second, -kTolPsd);
}

TEST(ShiftSearch, CpdVariantsTerminateUpTo64) {
  for (const auto& spec :
       {make_spec(Variant::power, {1.0, 1.5}), make_spec(Variant::log, {1.0, 1.0}),
        make_spec(Variant::three_para_log, {1.0, 1.0, 1.5})}) {
    const auto result = shift_search(spec, integer_grid(64));
    GramMatrix shifted = build_gram(spec, integer_grid(64));
    shifted.entries.array() += result.constant;
    EXPECT_GE(min_eigenvalue(shifted), -kTolPsd) << variant_name(spec.variant);
  }
}

TEST(ShiftSearch, RejectsNonCpdVariant) {
  EXPECT_THROW(shift_search(make_spec(Variant::gauss_bias2, {1.0, 0.1}), integer_grid(8)),
               std::invalid_argument);
}

TEST(ShiftSearch, ConstantShiftLeavesAttentionUnchanged) {
  const auto spec = make_spec(Variant::log, {0.7, 1.3});
  const int length = 16;
  const auto result = shift_search(spec, integer_grid(length));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd q(length, 4), k(length, 4);
  for (int i = 0; i < length; ++i)
    for (int j = 0; j < 4; ++j) {
      q(i, j) = normal(rng);
      k(i, j) = normal(rng);
    }
  auto [bias, weight] = build_matrices(spec, length);
  const auto base = causal_softmax(composite_scores(q, k, bias, weight));
  BiasMatrix shifted = bias;
  for (int m = 0; m < length; ++m)
    for (int n = 0; n <= m; ++n) shifted.values(m, n) += result.constant;
  const auto lifted = causal_softmax(composite_scores(q, k, shifted, weight));
  EXPECT_LT((base.values - lifted.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClosureTransforms, PreserveCpd) {
  const KernelFn base = [](double d) { return -d * d; };  // power p=2, boundary case
  const auto grid = integer_grid(24);
  EXPECT_TRUE(check_cpd(cpd_alpha_power(base, 0.5), grid, 500, 13).pass);
  EXPECT_TRUE(check_cpd(cpd_alpha_power(base, 0.75), grid, 500, 13).pass);
  EXPECT_TRUE(check_cpd(cpd_log1m(base), grid, 500, 13).pass);
}

TEST(ClosureTransforms, AlphaPowerOfAbsIsLogFamilyShape) {
  // log1m of -d is exactly -log(1 + d), the log kernel with r1 = r2 = 1.
  const auto fn = cpd_log1m([](double d) { return -d; });
  const auto spec = make_spec(Variant::log, {1.0, 1.0});
  for (double d : {0.0, 1.0, 2.5, 17.0}) EXPECT_NEAR(fn(d), eval_bias_real(spec, d), 1e-15);
}

TEST(ClosureTransforms, AlphaOutOfRangeRejected) {
  EXPECT_THROW(cpd_alpha_power([](double d) { return -d; }, 1.0), std::invalid_argument);
  EXPECT_THROW(cpd_alpha_power([](double d) { return -d; }, 0.0), std::invalid_argument);
}

}  // namespace
}  // namespace kerple
