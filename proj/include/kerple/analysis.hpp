// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Effective-length analysis and kernel-curve dumps. The effective length of a
// head is the smallest distance at which its bias drops strictly below the
// threshold (default -2, roughly an exp(-2) attenuation inside the Softmax).

#ifndef KERPLE_ANALYSIS_HPP
#define KERPLE_ANALYSIS_HPP

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kerple/kernels.hpp"

namespace kerple {

inline constexpr double kEffectiveLengthThreshold = -2.0;
inline constexpr long long kEffectiveLengthMaxDistance = 20480;

namespace detail {

// Smallest integer d with eval_bias(d) < threshold, given a real-valued
// crossing point t (bias(t) == threshold). Strict inequality: the boundary
// case bias(d) == threshold exactly does not trigger.
inline long long strict_crossing(const KernelSpec& spec, double t, double threshold) {
  long long d = std::max<long long>(1, static_cast<long long>(std::floor(t)) + 1);
  // Round-off guard: walk to the exact strict crossing.
  while (d > 1 && eval_bias(spec, d - 1) < threshold) --d;
  while (!(eval_bias(spec, d) < threshold)) ++d;
  return d;
}

}  // namespace detail

// Smallest integer distance with eval_bias < threshold; nullopt when the
// bias never crosses (bounded-below kernels) within max_distance.
inline std::optional<long long> effective_length(
    const KernelSpec& spec, double threshold = kEffectiveLengthThreshold,
    long long max_distance = kEffectiveLengthMaxDistance) {
  validate(spec);
  if (max_distance < 1) throw std::invalid_argument("max_distance must be >= 1");
  if (!(threshold < 0.0)) throw std::invalid_argument("threshold must be negative");
  const auto& r = spec.params;
  // Closed-form crossing point t solves bias(t) == threshold; the effective
  // length is the first integer strictly past it.
  auto cross = [&](double t) -> std::optional<long long> {
    if (!(t < static_cast<double>(max_distance) + 1.0)) return std::nullopt;
    const long long d = detail::strict_crossing(spec, t, threshold);
    return d <= max_distance ? std::optional<long long>(d) : std::nullopt;
  };
  switch (spec.variant) {
    case Variant::power:
    case Variant::bias_plus_weight:
      return cross(std::pow(-threshold / r[0], 1.0 / r[1]));
    case Variant::alibi_fixed:
      return cross(-threshold / alibi_slope(spec.head_index, spec.num_heads));
    case Variant::log:
      return cross(std::expm1(-threshold / r[0]) / r[1]);
    case Variant::three_para_log:
      return cross(std::pow(std::expm1(-threshold / r[0]) / r[1], 1.0 / r[2]));
    case Variant::gauss_bias2:
    case Variant::gauss_bias3:
    case Variant::gauss_weight1:
    case Variant::gauss_weight2:
      // Bias is nonnegative and never crosses a negative threshold.
      return std::nullopt;
    case Variant::t5_bucket: {
      // Learned buckets: assert monotone decay before scanning.
      double prev = eval_bias(spec, 0);
      for (long long d = 1; d <= max_distance; ++d) {
        const double v = eval_bias(spec, d);
        if (v > prev + 1e-12)
          throw std::invalid_argument(
              "effective_length requires monotone decay; t5_bucket values increase at d=" +
              std::to_string(d));
        if (v < threshold) return d;
        prev = v;
      }
      return std::nullopt;
    }
  }
  throw std::logic_error("unknown variant");
}

struct EffectiveLengthCurve {
  std::vector<std::optional<long long>> eff;  // per head
  std::vector<long long> grid;                // distances
  std::vector<int> counts;                    // |{h : eff(h) <= D}| per grid entry
};

// Cumulative count of heads whose effective length is reached by each
// distance on the grid (default 0..max_distance).
inline EffectiveLengthCurve cumulative_curve(
    const std::vector<KernelSpec>& catalog,
    long long max_distance = kEffectiveLengthMaxDistance,
    double threshold = kEffectiveLengthThreshold) {
  if (catalog.empty()) throw std::invalid_argument("empty catalog");
  EffectiveLengthCurve curve;
  for (const auto& spec : catalog)
    curve.eff.push_back(effective_length(spec, threshold, max_distance));
  curve.grid.resize(max_distance + 1);
  curve.counts.resize(max_distance + 1);
  for (long long d = 0; d <= max_distance; ++d) {
    curve.grid[d] = d;
    int count = 0;
    for (const auto& e : curve.eff)
      if (e && *e <= d) ++count;
    curve.counts[d] = count;
  }
  return curve;
}

inline void write_curve_csv(const std::string& path, const EffectiveLengthCurve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "distance,heads_at_or_past_effective_length\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i)
    os << curve.grid[i] << "," << curve.counts[i] << "\n";
}

inline void write_effective_lengths_csv(const std::string& path,
                                        const EffectiveLengthCurve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "head,effective_length\n";
  for (std::size_t h = 0; h < curve.eff.size(); ++h) {
    os << h << ",";
    if (curve.eff[h]) os << *curve.eff[h];
    else os << "none";
    os << "\n";
  }
}

// Bias values per head over distances 0..max_distance, for kernel plots.
inline void write_kernel_curves_csv(const std::string& path,
                                    const std::vector<KernelSpec>& catalog,
                                    long long max_distance) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(12);
  os << "head,distance,value,variant\n";
  for (const auto& spec : catalog)
    for (long long d = 0; d <= max_distance; ++d)
      os << spec.head_index << "," << d << "," << eval_bias(spec, d) << ","
         << variant_name(spec.variant) << "\n";
}

// --- minimal SVG line charts -----------------------------------------------

struct SvgSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Hand-rolled line chart; the CSV next to it is the authoritative data.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::vector<SvgSeries>& series, int width = 800,
                            int height = 480) {
  if (series.empty()) throw std::invalid_argument("no series to plot");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const int margin = 50;
  const double sx = (width - 2.0 * margin) / (xmax - xmin);
  const double sy = (height - 2.0 * margin) / (ymax - ymin);
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << title << "</text>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
     << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
     << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points) {
      const double px = margin + (x - xmin) * sx;
      const double py = height - margin - (y - ymin) * sy;
      os << px << "," << py << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * (i + 1)
       << "\" font-size=\"11\" fill=\"" << color << "\">" << series[i].label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace kerple

#endif  // KERPLE_ANALYSIS_HPP
