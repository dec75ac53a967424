// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Length-extrapolation evaluation: non-overlapping perplexity, position-wise
// losses, the windowed-attention baseline, and the seed-paired significance
// table.

#ifndef KERPLE_EVAL_HPP
#define KERPLE_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kerple/model.hpp"
#include "kerple/stats.hpp"

namespace kerple {

// Disjoint consecutive chunks of eval_len + 1 tokens; the remainder past the
// last full chunk is dropped so every variant scores the same token set.
inline std::vector<std::vector<int>> chunk_corpus(const Corpus& corpus, int eval_len) {
  if (eval_len < 1) throw std::invalid_argument("eval_len must be >= 1");
  if (corpus.size() < static_cast<std::size_t>(eval_len) + 1)
    throw std::invalid_argument("corpus shorter than eval_len + 1");
  const std::size_t num_chunks = (corpus.size() - 1) / static_cast<std::size_t>(eval_len);
  std::vector<std::vector<int>> chunks(num_chunks);
  for (std::size_t i = 0; i < num_chunks; ++i) {
    chunks[i].resize(eval_len + 1);
    const std::size_t base = i * static_cast<std::size_t>(eval_len);
    for (int t = 0; t <= eval_len; ++t) chunks[i][t] = corpus[base + t];
  }
  return chunks;
}

// Mean loss at each position across chunks; window = 0 is full attention.
inline std::vector<double> positionwise_losses(const Checkpoint& ckpt, const Corpus& corpus,
                                               int eval_len, int window = 0) {
  const auto chunks = chunk_corpus(corpus, eval_len);
  std::vector<double> sums(eval_len, 0.0);
  for (const auto& chunk : chunks) {
    const std::vector<double> losses = score_sequence(ckpt, chunk, window);
    for (int t = 0; t < eval_len; ++t) sums[t] += losses[t];
  }
  for (double& s : sums) s /= static_cast<double>(chunks.size());
  return sums;
}

inline double nonoverlap_ppl(const Checkpoint& ckpt, const Corpus& corpus, int eval_len) {
  const auto chunks = chunk_corpus(corpus, eval_len);
  double total = 0.0;
  for (const auto& chunk : chunks)
    for (double loss : score_sequence(ckpt, chunk)) total += loss;
  return std::exp(total / static_cast<double>(chunks.size() * static_cast<std::size_t>(eval_len)));
}

// Position-wise losses with attention restricted to the last `window` keys.
inline std::vector<double> windowed_baseline(const Checkpoint& ckpt, const Corpus& corpus,
                                             int eval_len, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (window > eval_len) throw std::invalid_argument("window must be <= eval_len");
  return positionwise_losses(ckpt, corpus, eval_len, window);
}

// --- report ----------------------------------------------------------------

struct PerLengthStats {
  double mean = 0.0;
  double stddev = 0.0;   // sample standard deviation over seeds
  double stderror = 0.0; // stddev / sqrt(num seeds)
  std::vector<double> per_seed;
};

struct TTestEntry {
  std::string baseline_variant;  // compared against the log variant
  int length = 0;
  double t = 0.0;
  double p = 1.0;
  TTestVerdict verdict = TTestVerdict::not_significant;
  bool dagger = false;  // significant and the log variant's mean is lower
};

struct EvalReport {
  std::vector<int> lengths;
  std::vector<std::uint64_t> seeds;
  // variant name -> length -> stats over seeds
  std::map<std::string, std::map<int, PerLengthStats>> perplexities;
  // variant name -> length -> mean position-wise losses
  std::map<std::string, std::map<int, std::vector<double>>> position_losses;
  std::vector<TTestEntry> ttests;
  std::string reference_variant = "log";
};

// Checkpoints grouped by variant label, one per seed, trained under identical
// configs except the kernel variant.
inline EvalReport build_report(
    const std::map<std::string, std::vector<Checkpoint>>& models, const Corpus& corpus,
    const std::vector<int>& lengths, double alpha = 0.05,
    const std::string& reference_variant = "log", bool with_positions = false) {
  if (models.empty()) throw std::invalid_argument("no models given");
  EvalReport report;
  report.lengths = lengths;
  report.reference_variant = reference_variant;
  const std::size_t num_seeds = models.begin()->second.size();
  for (const auto& [name, ckpts] : models)
    if (ckpts.size() != num_seeds)
      throw std::invalid_argument("seed count differs between variants");
  for (std::size_t s = 0; s < num_seeds; ++s)
    report.seeds.push_back(models.begin()->second[s].config.seed);

  for (const auto& [name, ckpts] : models) {
    for (int length : lengths) {
      PerLengthStats stats;
      for (const auto& ckpt : ckpts)
        stats.per_seed.push_back(nonoverlap_ppl(ckpt, corpus, length));
      double mean = 0.0;
      for (double v : stats.per_seed) mean += v;
      mean /= static_cast<double>(stats.per_seed.size());
      double ss = 0.0;
      for (double v : stats.per_seed) ss += (v - mean) * (v - mean);
      stats.mean = mean;
      stats.stddev = stats.per_seed.size() > 1
                         ? std::sqrt(ss / static_cast<double>(stats.per_seed.size() - 1))
                         : 0.0;
      stats.stderror = stats.stddev / std::sqrt(static_cast<double>(stats.per_seed.size()));
      report.perplexities[name][length] = std::move(stats);
      if (with_positions)
        report.position_losses[name][length] =
            positionwise_losses(ckpts.front(), corpus, length);
    }
  }

  if (models.count(reference_variant) && num_seeds >= 2) {
    for (const auto& [name, ckpts] : models) {
      if (name == reference_variant) continue;
      for (int length : lengths) {
        const auto& ref = report.perplexities[reference_variant][length].per_seed;
        const auto& other = report.perplexities[name][length].per_seed;
        const TTestResult r = paired_ttest(other, ref, alpha);
        TTestEntry entry;
        entry.baseline_variant = name;
        entry.length = length;
        entry.t = r.t;
        entry.p = r.p;
        entry.verdict = r.verdict;
        entry.dagger = r.verdict == TTestVerdict::significant &&
                       report.perplexities[reference_variant][length].mean <
                           report.perplexities[name][length].mean;
        report.ttests.push_back(entry);
      }
    }
  }
  return report;
}

// --- CSV emission ----------------------------------------------------------

inline void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(12);
  os << "variant,length,seed,ppl\n";
  for (const auto& [name, by_length] : report.perplexities)
    for (const auto& [length, stats] : by_length)
      for (std::size_t s = 0; s < stats.per_seed.size(); ++s)
        os << name << "," << length << "," << report.seeds[s] << "," << stats.per_seed[s]
           << "\n";
}

inline void write_summary_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(12);
  os << "variant,length,mean_ppl,stddev,stderr\n";
  for (const auto& [name, by_length] : report.perplexities)
    for (const auto& [length, stats] : by_length)
      os << name << "," << length << "," << stats.mean << "," << stats.stddev << ","
         << stats.stderror << "\n";
}

inline void write_positions_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(12);
  os << "variant,length,position,mean_loss\n";
  for (const auto& [name, by_length] : report.position_losses)
    for (const auto& [length, losses] : by_length)
      for (std::size_t pos = 0; pos < losses.size(); ++pos)
        os << name << "," << length << "," << pos << "," << losses[pos] << "\n";
}

inline void write_ttest_csv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(12);
  os << "baseline_variant,length,t,p,verdict,dagger\n";
  for (const auto& e : report.ttests)
    os << e.baseline_variant << "," << e.length << "," << e.t << "," << e.p << ","
       << verdict_name(e.verdict) << "," << (e.dagger ? 1 : 0) << "\n";
}

}  // namespace kerple

#endif  // KERPLE_EVAL_HPP
