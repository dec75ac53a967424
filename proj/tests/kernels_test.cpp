// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kerple/kernels.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

namespace kerple {
namespace {

TEST(EvalBias, PowerDirectFormula) {
  const auto spec = make_spec(Variant::power, {1.0, 2.0});
  EXPECT_DOUBLE_EQ(eval_bias(spec, 3), -9.0);
}

TEST(EvalBias, LogZeroDistance) {
  const auto spec = make_spec(Variant::log, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(eval_bias(spec, 0), 0.0);
}

TEST(EvalBias, AlibiFixedSlope) {
  // head h=1 of H=8 has slope 2^-1
  const auto spec = make_spec(Variant::alibi_fixed, {}, 0, 8);
  EXPECT_DOUBLE_EQ(eval_bias(spec, 4), -2.0);
}

TEST(EvalBias, T5NegativeDistanceUsesBucketZero) {
  std::vector<double> buckets(kT5NumBuckets);
  for (int i = 0; i < kT5NumBuckets; ++i) buckets[i] = 10.0 + i;
  const auto spec = make_spec(Variant::t5_bucket, buckets);
  EXPECT_DOUBLE_EQ(eval_bias(spec, -3), buckets[0]);
  EXPECT_DOUBLE_EQ(eval_bias(spec, 7), buckets[7]);
}

TEST(EvalBias, RejectsConstraintViolation) {
  KernelSpec bad{Variant::power, {-1.0, 1.0}, 0, 1};
  try {
    eval_bias(bad, 1);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("r1"), std::string::npos);
  }
  KernelSpec bad2{Variant::power, {1.0, 2.5}, 0, 1};
  EXPECT_THROW(eval_bias(bad2, 1), std::domain_error);
}

TEST(EvalBias, MonotoneDecayForCpdVariants) {
  for (const auto& spec :
       {make_spec(Variant::power, {0.7, 1.3}), make_spec(Variant::log, {0.5, 2.0}),
        make_spec(Variant::three_para_log, {0.5, 2.0, 1.5})}) {
    double prev = eval_bias(spec, 0);
    EXPECT_DOUBLE_EQ(prev, 0.0);
    for (long long d = 1; d < 100; ++d) {
      const double v = eval_bias(spec, d);
      EXPECT_LT(v, prev) << variant_name(spec.variant) << " at d=" << d;
      prev = v;
    }
  }
}

TEST(EvalWeight, OneAtZeroDistance) {
  EXPECT_DOUBLE_EQ(eval_weight(make_spec(Variant::gauss_weight1, {3.7}), 0), 1.0);
}

TEST(EvalWeight, DirectValues) {
  EXPECT_DOUBLE_EQ(eval_weight(make_spec(Variant::gauss_weight2, {1.0, 1.0}), 2),
                   std::exp(-2.0));
  EXPECT_DOUBLE_EQ(
      eval_weight(make_spec(Variant::bias_plus_weight, {1.0, 1.0, 0.5, 2.0}), 2),
      std::exp(-2.0));
}

TEST(EvalWeight, RejectsBiasOnlyVariant) {
  EXPECT_THROW(eval_weight(make_spec(Variant::log, {1.0, 1.0}), 1),
               std::invalid_argument);
}

TEST(EvalWeight, StaysInUnitInterval) {
  const auto spec = make_spec(Variant::gauss_weight2, {0.3, 1.7});
  for (long long d = 0; d < 200; ++d) {
    const double w = eval_weight(spec, d);
    // exp underflows to 0 at large distances; 0 is an acceptable limit value.
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
    if (d < 16) EXPECT_GT(w, 0.0);
  }
}

TEST(T5Bucket, SpecCases) {
  EXPECT_EQ(t5_bucket_index(-1), 0);
  EXPECT_EQ(t5_bucket_index(15), 15);
  EXPECT_EQ(t5_bucket_index(16), 16);
  EXPECT_EQ(t5_bucket_index(100000), 31);
}

TEST(T5Bucket, MonotoneNonDecreasing) {
  int prev = t5_bucket_index(0);
  for (long long d = 1; d <= 4096; ++d) {
    const int b = t5_bucket_index(d);
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(AlibiSlopes, EightHeads) {
  const auto slopes = alibi_slopes(8);
  ASSERT_EQ(slopes.size(), 8u);
  for (int h = 0; h < 8; ++h) EXPECT_DOUBLE_EQ(slopes[h], std::exp2(-(h + 1)));
}

TEST(AlibiSlopes, SingleHeadAndLastHead) {
  EXPECT_DOUBLE_EQ(alibi_slopes(1)[0], std::exp2(-8));
  for (int H : {2, 3, 5, 12}) EXPECT_DOUBLE_EQ(alibi_slopes(H).back(), std::exp2(-8));
}

TEST(BuildMatrices, SinglePosition) {
  const auto [bias, weight] = build_matrices(make_spec(Variant::log, {1.0, 1.0}), 1);
  EXPECT_EQ(bias.length, 1);
  EXPECT_DOUBLE_EQ(bias.values(0, 0), 0.0);
  EXPECT_FALSE(weight.has_value());
}

TEST(BuildMatrices, PowerLowerTriangle) {
  const auto [bias, weight] = build_matrices(make_spec(Variant::power, {1.0, 1.0}), 3);
  const double expected[3][3] = {{0, 0, 0}, {-1, 0, 0}, {-2, -1, 0}};
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 3; ++n) EXPECT_DOUBLE_EQ(bias.values(m, n), expected[m][n]);
}

TEST(BuildMatrices, SmallerLengthIsTopLeftBlock) {
  for (const auto& spec :
       {make_spec(Variant::log, {0.3, 1.1}),
        make_spec(Variant::bias_plus_weight, {0.5, 1.0, 0.2, 1.5})}) {
    const auto [b4, w4] = build_matrices(spec, 4);
    const auto [b3, w3] = build_matrices(spec, 3);
    EXPECT_TRUE(b3.values.isApprox(b4.values.topLeftCorner(3, 3), 0.0));
    if (w4) EXPECT_TRUE(w3->values.isApprox(w4->values.topLeftCorner(3, 3), 0.0));
  }
}

TEST(BuildMatrices, ShiftInvarianceAlongSubdiagonals) {
  const auto [bias, weight] =
      build_matrices(make_spec(Variant::three_para_log, {0.4, 1.2, 1.7}), 16);
  for (int m = 0; m < 16; ++m)
    for (int n = 0; n <= m; ++n) {
      if (m + 1 < 16 && n + 1 <= m + 1)
        EXPECT_DOUBLE_EQ(bias.values(m, n), bias.values(m + 1, n + 1));
    }
}

TEST(ParamVector, RoundTripBijection) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> positive(0.01, 50.0);
  std::uniform_real_distribution<double> interval(0.01, 1.99);
  for (int trial = 0; trial < 200; ++trial) {
    for (Mapping m : {Mapping::positive, Mapping::interval_0_2, Mapping::identity}) {
      const double value = m == Mapping::interval_0_2 ? interval(rng) : positive(rng);
      const double back = constrain(m, unconstrain(m, value));
      EXPECT_NEAR(back, value, 1e-12);
    }
  }
}

TEST(ParamVector, ConstrainedViewMatchesVariantDomain) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (Variant v : {Variant::power, Variant::log, Variant::three_para_log,
                    Variant::bias_plus_weight, Variant::gauss_weight2}) {
    ParamVector p;
    p.mapping = param_mappings(v);
    p.raw.resize(p.mapping.size());
    for (int trial = 0; trial < 50; ++trial) {
      for (auto& r : p.raw) r = normal(rng);
      const KernelSpec spec{v, p.constrained(), 0, 1};
      EXPECT_NO_THROW(validate(spec));
    }
  }
}

TEST(ParamVector, ArityMismatchRejected) {
  EXPECT_THROW(ParamVector::from_constrained(Variant::log, {1.0}), std::invalid_argument);
}

TEST(DefaultSpec, PowerAndLogStartAtAlibiSlope) {
  for (Variant v : {Variant::power, Variant::log}) {
    const auto spec = default_spec(v, 2, 4);
    EXPECT_DOUBLE_EQ(spec.params[0], alibi_slope(2, 4));
    EXPECT_DOUBLE_EQ(spec.params[1], 1.0);
  }
  EXPECT_DOUBLE_EQ(default_spec(Variant::three_para_log, 0, 4).params[2], 1.0);
}

TEST(Catalog, RoundTrip) {
  std::vector<KernelSpec> specs;
  for (int h = 0; h < 3; ++h)
    specs.push_back(make_spec(Variant::three_para_log, {0.1 * (h + 1), 1.5, 0.75}, h, 3));
  std::stringstream ss;
  save_catalog(ss, specs);
  const auto loaded = load_catalog(ss);
  ASSERT_EQ(loaded.size(), specs.size());
  for (std::size_t h = 0; h < specs.size(); ++h) {
    EXPECT_EQ(loaded[h].variant, specs[h].variant);
    EXPECT_EQ(loaded[h].head_index, specs[h].head_index);
    EXPECT_EQ(loaded[h].num_heads, specs[h].num_heads);
    for (std::size_t i = 0; i < specs[h].params.size(); ++i)
      EXPECT_DOUBLE_EQ(loaded[h].params[i], specs[h].params[i]);
  }
}

TEST(Catalog, RejectsMalformed) {
  std::stringstream ss("variant log\nnum_heads 2\nhead 0 1.0 1.0\n");
  EXPECT_THROW(load_catalog(ss), std::runtime_error);  // missing head 1
  std::stringstream ss2("head 0 1.0 1.0\n");
  EXPECT_THROW(load_catalog(ss2), std::runtime_error);  // head before metadata
}

}  // namespace
}  // namespace kerple
