// Copyright 2026 The kerple-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: verify | train | eval | analyze | curves.
// Exit codes: 0 success, 1 check failure, 2 usage error.

#include <CLI11.hpp>

#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kerple/analysis.hpp"
#include "kerple/eval.hpp"
#include "kerple/kernels.hpp"
#include "kerple/model.hpp"
#include "kerple/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace kerple;

std::string out_path(const std::string& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  return (fs::path(out_dir) / name).string();
}

std::vector<KernelSpec> load_specs(const std::string& catalog_path,
                                   const std::string& checkpoint_path) {
  if (catalog_path.empty() == checkpoint_path.empty())
    throw CLI::ValidationError("give exactly one of --catalog or --checkpoint");
  if (!catalog_path.empty()) return load_catalog(catalog_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  return catalog_from_params(ckpt.config, ckpt.params);
}

struct VerifyRow {
  std::string variant, check;
  double worst = 0.0;
  bool pass = false;
};

// Battery of numeric checks appropriate to each variant in the catalog.
std::vector<VerifyRow> run_verify(const std::vector<KernelSpec>& specs, int grid_size,
                                  int trials, std::uint64_t seed) {
  const auto grid = integer_grid(grid_size);
  std::vector<VerifyRow> rows;
  for (const auto& spec : specs) {
    const std::string name = variant_name(spec.variant);
    if (is_cpd_bias(spec.variant)) {
      const auto cpd = check_cpd(spec, grid, trials, seed);
      rows.push_back({name, "cpd_sum_zero", cpd.worst_value, cpd.pass});
      const auto search = shift_search(spec, grid);
      rows.push_back({name, "shift_psd", search.probes.back().second,
                      search.probes.back().second >= -kTolPsd});
    } else if (has_bias(spec.variant) && spec.variant != Variant::t5_bucket) {
      // Gaussian biases are PD outright.
      const auto pd = check_pd(bias_function(spec), grid, trials, seed);
      rows.push_back({name, "pd_unconstrained", pd.worst_value, pd.pass});
    } else if (spec.variant == Variant::t5_bucket) {
      double worst_rise = 0.0;
      for (int d = 1; d < grid_size; ++d)
        worst_rise = std::max(worst_rise, eval_bias(spec, d) - eval_bias(spec, d - 1));
      rows.push_back({name, "monotone_decay", worst_rise, worst_rise <= 1e-12});
    }
    if (has_weight(spec.variant)) {
      const KernelFn wfn = [spec](double d) {
        return eval_weight(spec, static_cast<long long>(std::llround(d)));
      };
      const auto pd = check_pd(wfn, grid, trials, seed);
      rows.push_back({name, "weight_pd", pd.worst_value, pd.pass});
    }
  }
  return rows;
}

int cmd_verify(const std::string& catalog, int grid_size, int trials, std::uint64_t seed,
               const std::string& out_dir) {
  const auto specs = load_catalog(catalog);
  const auto rows = run_verify(specs, grid_size, trials, seed);
  const std::string csv = out_path(out_dir, "verify.csv");
  std::ofstream os(csv);
  if (!os) throw std::runtime_error("cannot write " + csv);
  os.precision(12);
  os << "variant,check,worst_value,result\n";
  bool all_pass = true;
  for (const auto& row : rows) {
    os << row.variant << "," << row.check << "," << row.worst << ","
       << (row.pass ? "pass" : "fail") << "\n";
    std::cout << row.variant << " " << row.check << ": "
              << (row.pass ? "pass" : "FAIL") << " (worst " << row.worst << ")\n";
    all_pass = all_pass && row.pass;
  }
  std::cout << "wrote " << csv << "\n";
  return all_pass ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& out_dir, const std::string& ckpt_name,
              const std::string& variant_flag, long long steps_flag, long long seed_flag,
              long long trace_every) {
  ModelConfig config;
  if (!variant_flag.empty()) config.variant = variant_from_name(variant_flag);
  if (steps_flag >= 0) config.steps = steps_flag;
  if (seed_flag >= 0) config.seed = static_cast<std::uint64_t>(seed_flag);
  // The config file, when given, overrides any flags.
  if (!config_path.empty()) config = load_model_config(config_path);
  validate(config);
  const Corpus corpus = load_corpus(corpus_path);

  std::cout << "training " << variant_name(config.variant) << " seed " << config.seed
            << " for " << config.steps << " steps\n";
  const TrainResult result = train(config, corpus, config.steps, trace_every);
  const std::string ckpt_path = out_path(out_dir, ckpt_name);
  save_checkpoint(ckpt_path, result.checkpoint);
  const std::string trace_path = out_path(out_dir, "loss_trace.csv");
  std::ofstream os(trace_path);
  os.precision(12);
  os << "step,loss\n";
  for (const auto& [step, loss] : result.loss_trace) os << step << "," << loss << "\n";
  std::cout << "wrote " << ckpt_path << " and " << trace_path << "\n";
  if (!result.loss_trace.empty())
    std::cout << "final traced loss " << result.loss_trace.back().second << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& checkpoint_paths,
             const std::string& corpus_path, const std::vector<int>& lengths,
             double alpha, const std::string& reference, bool positions, bool svg,
             const std::string& out_dir) {
  std::map<std::string, std::vector<Checkpoint>> models;
  for (const auto& path : checkpoint_paths) {
    Checkpoint ckpt = load_checkpoint(path);
    models[variant_name(ckpt.config.variant)].push_back(std::move(ckpt));
  }
  const Corpus corpus = load_corpus(corpus_path);
  const EvalReport report =
      build_report(models, corpus, lengths, alpha, reference, positions);
  write_report_csv(out_path(out_dir, "report.csv"), report);
  write_summary_csv(out_path(out_dir, "summary.csv"), report);
  write_ttest_csv(out_path(out_dir, "ttest.csv"), report);
  if (positions) write_positions_csv(out_path(out_dir, "positions.csv"), report);
  if (svg && positions) {
    for (int length : report.lengths) {
      std::vector<SvgSeries> series;
      for (const auto& [name, by_length] : report.position_losses) {
        SvgSeries s{name, {}};
        const auto& losses = by_length.at(length);
        for (std::size_t t = 0; t < losses.size(); ++t)
          s.points.emplace_back(static_cast<double>(t), losses[t]);
        series.push_back(std::move(s));
      }
      write_svg_chart(out_path(out_dir, "positions_" + std::to_string(length) + ".svg"),
                      "position-wise loss, length " + std::to_string(length), series);
    }
  }
  for (const auto& [name, by_length] : report.perplexities)
    for (const auto& [length, stats] : by_length)
      std::cout << name << " @" << length << ": mean ppl " << stats.mean << " (stderr "
                << stats.stderror << ")\n";
  for (const auto& e : report.ttests)
    std::cout << e.baseline_variant << " @" << e.length << ": p=" << e.p << " "
              << verdict_name(e.verdict) << (e.dagger ? " dagger" : "") << "\n";
  std::cout << "wrote report.csv, summary.csv, ttest.csv"
            << (positions ? ", positions.csv" : "") << " in " << out_dir << "\n";
  return 0;
}

int cmd_analyze(const std::string& catalog, const std::string& checkpoint,
                double threshold, long long max_distance, bool svg,
                const std::string& out_dir) {
  const auto specs = load_specs(catalog, checkpoint);
  const auto curve = cumulative_curve(specs, max_distance, threshold);
  write_effective_lengths_csv(out_path(out_dir, "effective_lengths.csv"), curve);
  write_curve_csv(out_path(out_dir, "curve.csv"), curve);
  for (std::size_t h = 0; h < curve.eff.size(); ++h) {
    std::cout << "head " << h << ": effective length ";
    if (curve.eff[h]) std::cout << *curve.eff[h] << "\n";
    else std::cout << "none (within " << max_distance << ")\n";
  }
  if (svg) {
    SvgSeries s{"heads", {}};
    for (std::size_t i = 0; i < curve.grid.size(); ++i)
      s.points.emplace_back(static_cast<double>(curve.grid[i]),
                            static_cast<double>(curve.counts[i]));
    write_svg_chart(out_path(out_dir, "curve.svg"), "cumulative effective lengths", {s});
  }
  std::cout << "wrote effective_lengths.csv and curve.csv in " << out_dir << "\n";
  return 0;
}

int cmd_curves(const std::string& catalog, const std::string& checkpoint,
               long long max_distance, bool svg, const std::string& out_dir) {
  const auto specs = load_specs(catalog, checkpoint);
  write_kernel_curves_csv(out_path(out_dir, "kernel_curves.csv"), specs, max_distance);
  if (svg) {
    std::vector<SvgSeries> series;
    for (const auto& spec : specs) {
      SvgSeries s{"head " + std::to_string(spec.head_index), {}};
      for (long long d = 0; d <= max_distance; ++d)
        s.points.emplace_back(static_cast<double>(d), eval_bias(spec, d));
      series.push_back(std::move(s));
    }
    write_svg_chart(out_path(out_dir, "kernel_curves.svg"), "kernel bias curves", series);
  }
  std::cout << "wrote kernel_curves.csv in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kerple: kernelized relative positional bias toolkit"};
  app.require_subcommand(1);

  std::string out_dir = ".";
  if (const char* env = std::getenv("KERPLE_OUT_DIR")) out_dir = env;
  int threads = 1;
  if (const char* env = std::getenv("KERPLE_THREADS")) threads = std::atoi(env);
  app.add_option("--out-dir", out_dir, "Output directory (env: KERPLE_OUT_DIR)");
  app.add_option("--threads", threads, "Eigen thread count (env: KERPLE_THREADS)");

  auto* verify = app.add_subcommand("verify", "Numeric PD/CPD checks for a kernel catalog");
  std::string verify_catalog;
  int grid_size = 32, trials = 1000;
  std::uint64_t verify_seed = 0;
  verify->add_option("--catalog", verify_catalog, "Kernel catalog file")->required();
  verify->add_option("--grid", grid_size, "Integer grid size")->capture_default_str();
  verify->add_option("--trials", trials, "Sum-zero coefficient trials")->capture_default_str();
  verify->add_option("--seed", verify_seed, "RNG seed")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train the byte-level decoder");
  std::string train_config, train_corpus, ckpt_name = "checkpoint.bin", train_variant;
  long long train_steps = -1, train_seed = -1, trace_every = 100;
  train_cmd->add_option("--config", train_config,
                        "Config file (its values override the flags below)");
  train_cmd->add_option("--corpus", train_corpus, "Corpus file (raw bytes)")->required();
  train_cmd->add_option("--checkpoint-name", ckpt_name, "Output checkpoint filename")->capture_default_str();
  train_cmd->add_option("--variant", train_variant, "Kernel variant");
  train_cmd->add_option("--steps", train_steps, "Optimizer steps");
  train_cmd->add_option("--seed", train_seed, "Training seed");
  train_cmd->add_option("--trace-every", trace_every, "Loss trace stride")->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "Length-extrapolation evaluation report");
  std::vector<std::string> eval_ckpts;
  std::string eval_corpus, reference = "log";
  std::vector<int> lengths = {64, 256};
  double alpha = 0.05;
  bool positions = false, eval_svg = false;
  eval_cmd->add_option("--checkpoint", eval_ckpts, "Checkpoint files (repeatable)")
      ->required();
  eval_cmd->add_option("--corpus", eval_corpus, "Evaluation corpus file")->required();
  eval_cmd->add_option("--lengths", lengths, "Evaluation lengths")->capture_default_str();
  eval_cmd->add_option("--alpha", alpha, "Significance level")->capture_default_str();
  eval_cmd->add_option("--reference", reference, "Reference variant for t-tests")->capture_default_str();
  eval_cmd->add_flag("--positions", positions, "Also emit position-wise losses");
  eval_cmd->add_flag("--svg", eval_svg, "Emit SVG charts (with --positions)");

  auto* analyze = app.add_subcommand("analyze", "Effective lengths and cumulative curve");
  std::string an_catalog, an_checkpoint;
  double threshold = kEffectiveLengthThreshold;
  long long an_max = kEffectiveLengthMaxDistance;
  bool an_svg = false;
  analyze->add_option("--catalog", an_catalog, "Kernel catalog file");
  analyze->add_option("--checkpoint", an_checkpoint, "Checkpoint file");
  analyze->add_option("--threshold", threshold, "Bias threshold (strict)")->capture_default_str();
  analyze->add_option("--max-distance", an_max, "Grid end")->capture_default_str();
  analyze->add_flag("--svg", an_svg, "Emit SVG chart");

  auto* curves = app.add_subcommand("curves", "Per-head kernel bias curves");
  std::string cv_catalog, cv_checkpoint;
  long long cv_max = 512;
  bool cv_svg = false;
  curves->add_option("--catalog", cv_catalog, "Kernel catalog file");
  curves->add_option("--checkpoint", cv_checkpoint, "Checkpoint file");
  curves->add_option("--max-distance", cv_max, "Largest distance")->capture_default_str();
  curves->add_flag("--svg", cv_svg, "Emit SVG chart");

  // Let global options (--out-dir, --threads) appear after the subcommand.
  for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    app.parse(argc, argv);
    Eigen::setNbThreads(threads > 0 ? threads : 1);
    if (*verify) return cmd_verify(verify_catalog, grid_size, trials, verify_seed, out_dir);
    if (*train_cmd)
      return cmd_train(train_config, train_corpus, out_dir, ckpt_name, train_variant,
                       train_steps, train_seed, trace_every);
    if (*eval_cmd)
      return cmd_eval(eval_ckpts, eval_corpus, lengths, alpha, reference, positions,
                      eval_svg, out_dir);
    if (*analyze) return cmd_analyze(an_catalog, an_checkpoint, threshold, an_max, an_svg, out_dir);
    if (*curves) return cmd_curves(cv_catalog, cv_checkpoint, cv_max, cv_svg, out_dir);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
