// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef KERPLE_KERNELS_HPP
#define KERPLE_KERNELS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kerple {

// Shift-invariant kernel variants. The first four are CPD biases, the Gauss
// family is bounded (bias in (0, r1], weight in (0, 1]), the last two are the
// fixed-slope linear bias and the 32-slot log-binned bucket table.
enum class Variant {
  power,
  log,
  three_para_log,
  bias_plus_weight,
  gauss_bias2,
  gauss_bias3,
  gauss_weight1,
  gauss_weight2,
  alibi_fixed,
  t5_bucket,
};

enum class Mapping { positive, interval_0_2, identity };

constexpr int kT5NumBuckets = 32;
constexpr int kT5MaxExact = 16;
constexpr int kT5MaxDistance = 128;

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::power: return "power";
    case Variant::log: return "log";
    case Variant::three_para_log: return "three_para_log";
    case Variant::bias_plus_weight: return "bias_plus_weight";
    case Variant::gauss_bias2: return "gauss_bias2";
    case Variant::gauss_bias3: return "gauss_bias3";
    case Variant::gauss_weight1: return "gauss_weight1";
    case Variant::gauss_weight2: return "gauss_weight2";
    case Variant::alibi_fixed: return "alibi_fixed";
    case Variant::t5_bucket: return "t5_bucket";
  }
  throw std::logic_error("unknown variant");
}

inline Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::power, Variant::log, Variant::three_para_log,
                    Variant::bias_plus_weight, Variant::gauss_bias2,
                    Variant::gauss_bias3, Variant::gauss_weight1,
                    Variant::gauss_weight2, Variant::alibi_fixed,
                    Variant::t5_bucket}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown kernel variant: " + name);
}

// Number of per-head parameters.
inline int arity(Variant v) {
  switch (v) {
    case Variant::power: return 2;
    case Variant::log: return 2;
    case Variant::three_para_log: return 3;
    case Variant::bias_plus_weight: return 4;
    case Variant::gauss_bias2: return 2;
    case Variant::gauss_bias3: return 3;
    case Variant::gauss_weight1: return 1;
    case Variant::gauss_weight2: return 2;
    case Variant::alibi_fixed: return 0;
    case Variant::t5_bucket: return kT5NumBuckets;
  }
  throw std::logic_error("unknown variant");
}

// Constraint domain of each parameter slot.
inline std::vector<Mapping> param_mappings(Variant v) {
  using M = Mapping;
  switch (v) {
    case Variant::power: return {M::positive, M::interval_0_2};
    case Variant::log: return {M::positive, M::positive};
    case Variant::three_para_log:
      return {M::positive, M::positive, M::interval_0_2};
    case Variant::bias_plus_weight:
      return {M::positive, M::interval_0_2, M::positive, M::interval_0_2};
    case Variant::gauss_bias2: return {M::positive, M::positive};
    case Variant::gauss_bias3:
      return {M::positive, M::positive, M::interval_0_2};
    case Variant::gauss_weight1: return {M::positive};
    case Variant::gauss_weight2: return {M::positive, M::interval_0_2};
    case Variant::alibi_fixed: return {};
    case Variant::t5_bucket:
      return std::vector<Mapping>(kT5NumBuckets, M::identity);
  }
  throw std::logic_error("unknown variant");
}

inline bool has_weight(Variant v) {
  return v == Variant::bias_plus_weight || v == Variant::gauss_weight1 ||
         v == Variant::gauss_weight2;
}

// True when the additive bias part is nonzero.
inline bool has_bias(Variant v) {
  return v != Variant::gauss_weight1 && v != Variant::gauss_weight2;
}

// Bias variants with k~(0)=0 and a conditionally nonnegative quadratic form.
inline bool is_cpd_bias(Variant v) {
  return v == Variant::power || v == Variant::log ||
         v == Variant::three_para_log || v == Variant::bias_plus_weight ||
         v == Variant::alibi_fixed;
}

inline bool trainable(Variant v) { return arity(v) > 0; }

// --- constraint bijections -------------------------------------------------

inline double constrain(Mapping m, double raw) {
  switch (m) {
    case Mapping::positive: return std::exp(raw);
    case Mapping::interval_0_2: return 2.0 / (1.0 + std::exp(-raw));
    case Mapping::identity: return raw;
  }
  throw std::logic_error("unknown mapping");
}

inline double unconstrain(Mapping m, double value) {
  switch (m) {
    case Mapping::positive:
      if (!(value > 0.0)) throw std::domain_error("positive mapping needs value > 0");
      return std::log(value);
    case Mapping::interval_0_2:
      if (!(value > 0.0 && value < 2.0))
        throw std::domain_error("interval_0_2 mapping needs value in (0, 2)");
      return std::log(value / (2.0 - value));
    case Mapping::identity: return value;
  }
  throw std::logic_error("unknown mapping");
}

// d constrain / d raw, for chaining kernel-parameter gradients.
inline double constrain_derivative(Mapping m, double raw) {
  switch (m) {
    case Mapping::positive: return std::exp(raw);
    case Mapping::interval_0_2: {
      const double s = 1.0 / (1.0 + std::exp(-raw));
      return 2.0 * s * (1.0 - s);
    }
    case Mapping::identity: return 1.0;
  }
  throw std::logic_error("unknown mapping");
}

// Unconstrained trainable parameters with their per-slot bijections.
struct ParamVector {
  std::vector<double> raw;
  std::vector<Mapping> mapping;

  std::vector<double> constrained() const {
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = constrain(mapping[i], raw[i]);
    return out;
  }

  static ParamVector from_constrained(Variant v, const std::vector<double>& values) {
    ParamVector p;
    p.mapping = param_mappings(v);
    if (values.size() != p.mapping.size())
      throw std::invalid_argument("parameter count does not match variant arity");
    p.raw.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      p.raw[i] = unconstrain(p.mapping[i], values[i]);
    return p;
  }
};

// --- ALiBi slopes ----------------------------------------------------------

// slope = 2^(-8h/H) with h = 1..H; head_index is 0-based.
inline double alibi_slope(int head_index, int num_heads) {
  if (num_heads < 1) throw std::invalid_argument("num_heads must be >= 1");
  if (head_index < 0 || head_index >= num_heads)
    throw std::invalid_argument("head_index out of range");
  return std::exp2(-8.0 * (head_index + 1) / num_heads);
}

inline std::vector<double> alibi_slopes(int num_heads) {
  std::vector<double> s(num_heads);
  for (int h = 0; h < num_heads; ++h) s[h] = alibi_slope(h, num_heads);
  return s;
}

// --- T5 log-binning --------------------------------------------------------

inline int t5_bucket_index(long long distance) {
  if (distance < 0) return 0;
  if (distance < kT5MaxExact) return static_cast<int>(distance);
  const double log_ratio =
      std::log(static_cast<double>(distance) / kT5MaxExact) /
      std::log(static_cast<double>(kT5MaxDistance) / kT5MaxExact);
  const long long idx = kT5MaxExact + static_cast<long long>(std::floor(kT5MaxExact * log_ratio));
  return static_cast<int>(std::min<long long>(kT5NumBuckets - 1, idx));
}

// --- KernelSpec ------------------------------------------------------------

struct KernelSpec {
  Variant variant = Variant::log;
  std::vector<double> params;  // constrained domain
  int head_index = 0;          // in [0, num_heads)
  int num_heads = 1;
};

inline void validate(const KernelSpec& spec) {
  const auto maps = param_mappings(spec.variant);
  if (spec.params.size() != maps.size()) {
    throw std::domain_error(std::string(variant_name(spec.variant)) + " expects " +
                            std::to_string(maps.size()) + " parameters, got " +
                            std::to_string(spec.params.size()));
  }
  if (spec.num_heads < 1 || spec.head_index < 0 || spec.head_index >= spec.num_heads)
    throw std::domain_error("head_index must lie in [0, num_heads)");
  for (std::size_t i = 0; i < spec.params.size(); ++i) {
    const double r = spec.params[i];
    const std::string name = "r" + std::to_string(i + 1);
    if (!std::isfinite(r)) throw std::domain_error(name + " is not finite");
    switch (maps[i]) {
      case Mapping::positive:
        if (!(r > 0.0)) throw std::domain_error(name + " must be > 0");
        break;
      case Mapping::interval_0_2:
        if (!(r > 0.0 && r <= 2.0)) throw std::domain_error(name + " must be in (0, 2]");
        break;
      case Mapping::identity: break;
    }
  }
}

inline KernelSpec make_spec(Variant v, std::vector<double> params, int head_index = 0,
                            int num_heads = 1) {
  KernelSpec spec{v, std::move(params), head_index, num_heads};
  validate(spec);
  return spec;
}

// Initialization used for trainable variants: start at the ALiBi slope of the
// head (the r2 = 1 special case of the power/log families).
inline KernelSpec default_spec(Variant v, int head_index, int num_heads) {
  const double slope = alibi_slope(head_index, num_heads);
  std::vector<double> params;
  switch (v) {
    case Variant::power: params = {slope, 1.0}; break;
    case Variant::log: params = {slope, 1.0}; break;
    case Variant::three_para_log: params = {slope, 1.0, 1.0}; break;
    case Variant::bias_plus_weight: params = {slope, 1.0, 0.1, 1.0}; break;
    case Variant::gauss_bias2: params = {1.0, 0.01}; break;
    case Variant::gauss_bias3: params = {1.0, 0.01, 1.0}; break;
    case Variant::gauss_weight1: params = {0.01}; break;
    case Variant::gauss_weight2: params = {0.01, 1.0}; break;
    case Variant::alibi_fixed: params = {}; break;
    case Variant::t5_bucket: params.assign(kT5NumBuckets, 0.0); break;
  }
  return make_spec(v, std::move(params), head_index, num_heads);
}

namespace detail {

// pow with the convention 0^p = 0 for p > 0 (distances are nonnegative).
inline double dist_pow(double d, double p) { return d == 0.0 ? 0.0 : std::pow(d, p); }

}  // namespace detail

// Bias part of the composite kernel at a real positional difference. The
// constant c of the bias kernel is never materialized; Softmax absorbs it.
inline double eval_bias_real(const KernelSpec& spec, double distance) {
  validate(spec);
  const auto& r = spec.params;
  const double d = std::abs(distance);
  switch (spec.variant) {
    case Variant::power: return -r[0] * detail::dist_pow(d, r[1]);
    case Variant::log: return -r[0] * std::log1p(r[1] * d);
    case Variant::three_para_log:
      return -r[0] * std::log1p(r[1] * detail::dist_pow(d, r[2]));
    case Variant::bias_plus_weight: return -r[0] * detail::dist_pow(d, r[1]);
    case Variant::gauss_bias2: return r[0] * std::exp(-r[1] * d * d);
    case Variant::gauss_bias3:
      return r[0] * std::exp(-r[1] * detail::dist_pow(d, r[2]));
    case Variant::gauss_weight1:
    case Variant::gauss_weight2:
      return 0.0;  // weight-only composite: no additive term
    case Variant::alibi_fixed:
      return -alibi_slope(spec.head_index, spec.num_heads) * d;
    case Variant::t5_bucket:
      return r[t5_bucket_index(static_cast<long long>(std::llround(distance)))];
  }
  throw std::logic_error("unknown variant");
}

inline double eval_bias(const KernelSpec& spec, long long distance) {
  if (distance < 0 && spec.variant != Variant::t5_bucket)
    throw std::invalid_argument("distance must be nonnegative");
  return eval_bias_real(spec, static_cast<double>(distance));
}

// Multiplicative weight applied to the q.k product; in (0, 1], 1 at d = 0.
inline double eval_weight(const KernelSpec& spec, long long distance) {
  validate(spec);
  if (distance < 0) throw std::invalid_argument("distance must be nonnegative");
  if (!has_weight(spec.variant))
    throw std::invalid_argument(std::string("eval_weight called on bias-only variant ") +
                                variant_name(spec.variant));
  const auto& r = spec.params;
  const double d = static_cast<double>(distance);
  switch (spec.variant) {
    case Variant::bias_plus_weight:
      return std::exp(-r[2] * detail::dist_pow(d, r[3]));
    case Variant::gauss_weight1: return std::exp(-r[0] * d * d);
    case Variant::gauss_weight2:
      return std::exp(-r[0] * detail::dist_pow(d, r[1]));
    default: throw std::logic_error("unreachable");
  }
}

// d eval_bias / d params[i] in the constrained space. `out` has arity slots.
inline void eval_bias_param_grad(const KernelSpec& spec, long long distance,
                                 std::vector<double>& out) {
  const auto& r = spec.params;
  out.assign(r.size(), 0.0);
  const double d = static_cast<double>(distance < 0 ? 0 : distance);
  const double logd = d > 0.0 ? std::log(d) : 0.0;
  switch (spec.variant) {
    case Variant::power:
    case Variant::bias_plus_weight: {
      const double dp = detail::dist_pow(d, r[1]);
      out[0] = -dp;
      out[1] = -r[0] * dp * logd;
      break;
    }
    case Variant::log: {
      out[0] = -std::log1p(r[1] * d);
      out[1] = -r[0] * d / (1.0 + r[1] * d);
      break;
    }
    case Variant::three_para_log: {
      const double u = detail::dist_pow(d, r[2]);
      const double denom = 1.0 + r[1] * u;
      out[0] = -std::log1p(r[1] * u);
      out[1] = -r[0] * u / denom;
      out[2] = -r[0] * r[1] * u * logd / denom;
      break;
    }
    case Variant::gauss_bias2: {
      const double e = std::exp(-r[1] * d * d);
      out[0] = e;
      out[1] = -r[0] * d * d * e;
      break;
    }
    case Variant::gauss_bias3: {
      const double u = detail::dist_pow(d, r[2]);
      const double e = std::exp(-r[1] * u);
      out[0] = e;
      out[1] = -r[0] * u * e;
      out[2] = -r[0] * r[1] * u * logd * e;
      break;
    }
    case Variant::gauss_weight1:
    case Variant::gauss_weight2:
    case Variant::alibi_fixed:
      break;
    case Variant::t5_bucket:
      out[t5_bucket_index(distance)] = 1.0;
      break;
  }
}

// d eval_weight / d params[i] in the constrained space.
inline void eval_weight_param_grad(const KernelSpec& spec, long long distance,
                                   std::vector<double>& out) {
  const auto& r = spec.params;
  out.assign(r.size(), 0.0);
  const double d = static_cast<double>(distance < 0 ? 0 : distance);
  const double logd = d > 0.0 ? std::log(d) : 0.0;
  switch (spec.variant) {
    case Variant::bias_plus_weight: {
      const double u = detail::dist_pow(d, r[3]);
      const double w = std::exp(-r[2] * u);
      out[2] = -u * w;
      out[3] = -r[2] * u * logd * w;
      break;
    }
    case Variant::gauss_weight1: {
      out[0] = -d * d * std::exp(-r[0] * d * d);
      break;
    }
    case Variant::gauss_weight2: {
      const double u = detail::dist_pow(d, r[1]);
      const double w = std::exp(-r[0] * u);
      out[0] = -u * w;
      out[1] = -r[0] * u * logd * w;
      break;
    }
    default: break;
  }
}

// --- bias / weight matrices ------------------------------------------------

struct BiasMatrix {
  int length = 0;
  Eigen::MatrixXd values;  // lower triangle filled, upper triangle zero
};

struct WeightMatrix {
  int length = 0;
  Eigen::MatrixXd values;
};

// Materializes the lower-triangular bias (and, for weight-bearing variants,
// weight) matrix at any length, including lengths beyond training.
inline std::pair<BiasMatrix, std::optional<WeightMatrix>> build_matrices(
    const KernelSpec& spec, int length) {
  if (length < 1) throw std::invalid_argument("length must be >= 1");
  validate(spec);
  std::vector<double> bias_by_dist(length), weight_by_dist;
  for (int d = 0; d < length; ++d) bias_by_dist[d] = eval_bias(spec, d);
  const bool weighted = has_weight(spec.variant);
  if (weighted) {
    weight_by_dist.resize(length);
    for (int d = 0; d < length; ++d) weight_by_dist[d] = eval_weight(spec, d);
  }
  BiasMatrix bias{length, Eigen::MatrixXd::Zero(length, length)};
  std::optional<WeightMatrix> weight;
  if (weighted) weight = WeightMatrix{length, Eigen::MatrixXd::Zero(length, length)};
  for (int m = 0; m < length; ++m) {
    for (int n = 0; n <= m; ++n) {
      bias.values(m, n) = bias_by_dist[m - n];
      if (weighted) weight->values(m, n) = weight_by_dist[m - n];
    }
  }
  return {std::move(bias), std::move(weight)};
}

// --- catalog serialization -------------------------------------------------
//
// Plain-text key-value document, one spec per head:
//
//   # kerple-catalog v1
//   variant log
//   num_heads 4
//   head 0 0.5 1.0
//   head 1 ...

inline void save_catalog(std::ostream& os, const std::vector<KernelSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("catalog must hold at least one spec");
  os << "# kerple-catalog v1\n";
  os << "variant " << variant_name(specs[0].variant) << "\n";
  os << "num_heads " << specs[0].num_heads << "\n";
  os.precision(17);
  for (const auto& spec : specs) {
    os << "head " << spec.head_index;
    for (double p : spec.params) os << " " << p;
    os << "\n";
  }
}

inline void save_catalog(const std::string& path, const std::vector<KernelSpec>& specs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open catalog file for writing: " + path);
  save_catalog(os, specs);
}

inline std::vector<KernelSpec> load_catalog(std::istream& is) {
  std::string line;
  std::optional<Variant> variant;
  int num_heads = -1;
  std::vector<KernelSpec> specs;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "variant") {
      std::string name;
      ls >> name;
      variant = variant_from_name(name);
    } else if (key == "num_heads") {
      ls >> num_heads;
    } else if (key == "head") {
      if (!variant || num_heads < 1)
        throw std::runtime_error("catalog: head entries must follow variant and num_heads");
      int head = -1;
      ls >> head;
      std::vector<double> params;
      double p;
      while (ls >> p) params.push_back(p);
      specs.push_back(make_spec(*variant, std::move(params), head, num_heads));
    } else {
      throw std::runtime_error("catalog: unknown key '" + key + "'");
    }
  }
  if (specs.empty()) throw std::runtime_error("catalog: no head entries");
  if (static_cast<int>(specs.size()) != num_heads)
    throw std::runtime_error("catalog: head entry count does not match num_heads");
  return specs;
}

inline std::vector<KernelSpec> load_catalog(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open catalog file: " + path);
  return load_catalog(is);
}

}  // namespace kerple

#endif  // KERPLE_KERNELS_HPP
