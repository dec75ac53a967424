// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-head causal attention with the composite score
// (q.k * weight + bias) / sqrt(d). Masked entries carry a -inf sentinel so
// the softmax shift invariance is exact.

#ifndef KERPLE_ATTENTION_HPP
#define KERPLE_ATTENTION_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "kerple/kernels.hpp"

namespace kerple {

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

struct AttentionInput {
  Eigen::MatrixXd queries;  // L x d
  Eigen::MatrixXd keys;     // L x d
  Eigen::MatrixXd values;   // L x d
};

struct AttentionWeights {
  Eigen::MatrixXd values;  // L x L, rows sum to 1 over the causal prefix
};

// window = 0 means unrestricted; window W restricts position m to keys
// n in [m - W + 1, m].
inline Eigen::MatrixXd composite_scores(const Eigen::MatrixXd& queries,
                                        const Eigen::MatrixXd& keys,
                                        const BiasMatrix& bias,
                                        const std::optional<WeightMatrix>& weight,
                                        int window = 0) {
  const int length = static_cast<int>(queries.rows());
  const int head_dim = static_cast<int>(queries.cols());
  if (length < 1 || head_dim < 1) throw std::invalid_argument("empty attention input");
  if (keys.rows() != length || keys.cols() != head_dim)
    throw std::invalid_argument("query/key shape mismatch");
  if (bias.length != length) throw std::invalid_argument("bias matrix length mismatch");
  if (weight && weight->length != length)
    throw std::invalid_argument("weight matrix length mismatch");
  if (!queries.allFinite() || !keys.allFinite())
    throw std::invalid_argument("non-finite attention input");

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Eigen::MatrixXd qk = queries * keys.transpose();
  Eigen::MatrixXd scores(length, length);
  for (int m = 0; m < length; ++m) {
    const int first = window > 0 ? std::max(0, m - window + 1) : 0;
    for (int n = 0; n < length; ++n) {
      if (n > m || n < first) {
        scores(m, n) = kMasked;
      } else {
        const double w = weight ? weight->values(m, n) : 1.0;
        scores(m, n) = (qk(m, n) * w + bias.values(m, n)) * inv_sqrt_d;
      }
    }
  }
  return scores;
}

// Row-wise softmax over the unmasked entries, stabilized by subtracting the
// row maximum over finite scores only.
inline AttentionWeights causal_softmax(const Eigen::MatrixXd& scores) {
  const int length = static_cast<int>(scores.rows());
  if (scores.cols() != length) throw std::invalid_argument("scores must be square");
  AttentionWeights out{Eigen::MatrixXd::Zero(length, length)};
  for (int m = 0; m < length; ++m) {
    double row_max = kMasked;
    for (int n = 0; n <= m; ++n)
      if (scores(m, n) != kMasked) row_max = std::max(row_max, scores(m, n));
    if (row_max == kMasked)
      throw std::invalid_argument("all-masked softmax row " + std::to_string(m));
    double denom = 0.0;
    for (int n = 0; n <= m; ++n) {
      if (scores(m, n) == kMasked) continue;
      const double e = std::exp(scores(m, n) - row_max);
      out.values(m, n) = e;
      denom += e;
    }
    for (int n = 0; n <= m; ++n) out.values(m, n) /= denom;
  }
  return out;
}

inline Eigen::MatrixXd attend(const AttentionWeights& weights, const Eigen::MatrixXd& values) {
  if (weights.values.cols() != values.rows())
    throw std::invalid_argument("weights/values shape mismatch");
  return weights.values * values;
}

// Debug dump of per-head attention maps (head, m, n, weight); zero rows of
// the upper triangle are skipped.
inline void write_attention_csv(std::ostream& os,
                                const std::vector<AttentionWeights>& heads) {
  os.precision(12);
  os << "head,m,n,weight\n";
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& w = heads[h].values;
    for (int m = 0; m < w.rows(); ++m)
      for (int n = 0; n <= m; ++n)
        os << h << "," << m << "," << n << "," << w(m, n) << "\n";
  }
}

}  // namespace kerple

#endif  // KERPLE_ATTENTION_HPP
