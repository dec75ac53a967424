// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kerple/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace kerple {
namespace {

// Reference values frozen from an independent implementation of the
// regularized incomplete beta / paired t-test.

TEST(IncompleteBeta, Endpoints) {
  EXPECT_DOUBLE_EQ(incomplete_beta(2.0, 3.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(incomplete_beta(2.0, 3.0, 1.0), 1.0);
}

TEST(IncompleteBeta, FrozenValues) {
  EXPECT_NEAR(incomplete_beta(0.5, 5.0, 0.2), 0.8550723945959195, 1e-12);
  EXPECT_NEAR(incomplete_beta(2.0, 3.0, 0.5), 0.6875, 1e-12);
  EXPECT_NEAR(incomplete_beta(10.0, 10.0, 0.3), 0.032553356881300934, 1e-12);
  EXPECT_NEAR(incomplete_beta(0.5, 0.5, 0.7), 0.6309898804344546, 1e-12);
}

TEST(IncompleteBeta, SymmetryIdentity) {
  for (double x : {0.1, 0.37, 0.5, 0.81}) {
    EXPECT_NEAR(incomplete_beta(2.5, 4.0, x) + incomplete_beta(4.0, 2.5, 1.0 - x), 1.0,
                1e-12);
  }
}

TEST(IncompleteBeta, MonotoneInX) {
  double prev = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const double v = incomplete_beta(3.0, 2.0, i / 20.0);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(IncompleteBeta, RejectsBadArgs) {
  EXPECT_THROW(incomplete_beta(0.0, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(incomplete_beta(1.0, 1.0, 1.5), std::invalid_argument);
}

TEST(StudentT, FrozenTwoSidedP) {
  EXPECT_NEAR(student_t_two_sided_p(1.0, 1.0), 0.5, 1e-12);
  EXPECT_NEAR(student_t_two_sided_p(2.5, 9.0), 0.03386182768298571, 1e-12);
  EXPECT_NEAR(student_t_two_sided_p(0.0, 4.0), 1.0, 1e-12);
  EXPECT_NEAR(student_t_two_sided_p(12.3, 2.0), 0.006545001272475557, 1e-12);
}

TEST(StudentT, SymmetricInT) {
  for (double t : {0.3, 1.7, 4.2})
    EXPECT_DOUBLE_EQ(student_t_two_sided_p(t, 7.0), student_t_two_sided_p(-t, 7.0));
}

TEST(PairedTTest, FrozenExample) {
  const auto r = paired_ttest({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  EXPECT_NEAR(r.t, 4.242640687119285, 1e-12);
  EXPECT_NEAR(r.p, 0.013235599563682695, 1e-12);
  EXPECT_EQ(r.verdict, TTestVerdict::significant);
}

TEST(PairedTTest, FrozenPerplexityLikeExample) {
  const auto r = paired_ttest({2.1, 2.3, 1.9, 2.6, 2.2}, {2.0, 2.5, 1.7, 2.4, 2.3});
  EXPECT_NEAR(r.t, 0.49236596391733184, 1e-12);
  EXPECT_NEAR(r.p, 0.6482612949673064, 1e-12);
  EXPECT_EQ(r.verdict, TTestVerdict::not_significant);
}

TEST(PairedTTest, AntisymmetricInArguments) {
  const std::vector<double> a{1.1, 2.0, 0.7, 3.3, 2.4};
  const std::vector<double> b{1.3, 1.7, 0.9, 3.0, 2.8};
  const auto ab = paired_ttest(a, b);
  const auto ba = paired_ttest(b, a);
  EXPECT_DOUBLE_EQ(ab.t, -ba.t);
  EXPECT_DOUBLE_EQ(ab.p, ba.p);
}

TEST(PairedTTest, IdenticalSamplesDegenerate) {
  const auto r = paired_ttest({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
  EXPECT_EQ(r.verdict, TTestVerdict::degenerate);
  EXPECT_DOUBLE_EQ(r.p, 1.0);
  EXPECT_DOUBLE_EQ(r.t, 0.0);
}

TEST(PairedTTest, ConstantNonzeroShiftDegenerate) {
  const auto r = paired_ttest({2.0, 3.0, 4.0}, {1.0, 2.0, 3.0});
  EXPECT_EQ(r.verdict, TTestVerdict::degenerate);
  EXPECT_DOUBLE_EQ(r.p, 0.0);
  EXPECT_TRUE(std::isinf(r.t));
  EXPECT_GT(r.t, 0.0);
}

TEST(PairedTTest, RejectsMismatchedOrTinySamples) {
  EXPECT_THROW(paired_ttest({1.0, 2.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(paired_ttest({1.0}, {2.0}), std::invalid_argument);
}

}  // namespace
}  // namespace kerple
