#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specstg/commands.hpp"

using namespace specstg;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::string values;
  std::string graph;
  std::string checkpoint;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "JSON config (or a resolved snapshot)");
  cmd->add_option("-o,--out", f.out, "output directory (default: $SPECSTG_OUT_DIR or specstg_out)");
  cmd->add_option("--values", f.values, "values CSV, one row per node");
  cmd->add_option("--graph", f.graph, "distance CSV with header from,to,cost");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  cmd->add_option("--seed", f.seed, "random seed")->each([&f](const std::string&) {
    f.seed_given = true;
  });
  cmd->add_option("--threads", f.threads, "worker threads for forecasting");
  cmd->add_option("--set", f.sets, "override config keys, e.g. --set epochs=20 data.synth_nodes=8");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? parse_config("{}") : load_config(f.config);
  for (const auto& s : f.sets) apply_override(cfg, s);
  // Flags win over both the file and --set.
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (!f.values.empty()) cfg.data.values = f.values;
  if (!f.graph.empty()) cfg.data.graph = f.graph;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  if (f.seed_given) cfg.trainer.seed = f.seed;
  if (f.threads > 0) cfg.trainer.threads = f.threads;
  validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral diffusion forecasting for graph time series"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 failure, 2 config error, 3 data error, 4 numeric divergence,\n"
      "            5 node-count mismatch, 6 forecast/truth misalignment.");

  CommonFlags train_f, forecast_f, sweep_f, synth_f;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train_cmd, train_f);
  auto* forecast_cmd = app.add_subcommand("forecast", "sample forecasts for the test split");
  add_common(forecast_cmd, forecast_f);
  auto* sweep_cmd = app.add_subcommand("sweep", "beta_K x K sensitivity sweep");
  add_common(sweep_cmd, sweep_f);
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  add_common(synth_cmd, synth_f);

  std::string eval_dir, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "score forecast files against the truth");
  eval_cmd->add_option("--forecast-dir", eval_dir, "directory written by forecast")->required();
  eval_cmd->add_option("-o,--out", eval_out, "report directory (default: the forecast dir)");

  GradCheckOptions gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--fraction", gc.fraction, "share of entries sampled per parameter");
  grad_cmd->add_option("--tolerance", gc.tolerance, "max relative error");
  grad_cmd->add_option("--seed", gc.seed, "random seed");

  BenchOptions bench;
  std::string bench_csv = "bench_specconv.csv";
  auto* bench_cmd = app.add_subcommand("bench-specconv", "time spec_conv against the dense oracle");
  bench_cmd->add_option("--sizes", bench.sizes, "node counts, ascending")->delimiter(',');
  bench_cmd->add_option("--channels", bench.channels, "channels C");
  bench_cmd->add_option("--order", bench.order, "Chebyshev terms J");
  bench_cmd->add_option("--calls", bench.calls, "calls averaged per measurement");
  bench_cmd->add_option("--csv", bench_csv, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) {
      cmd_train(resolve(train_f), std::cerr);
    } else if (*forecast_cmd) {
      cmd_forecast(resolve(forecast_f), std::cerr);
    } else if (*sweep_cmd) {
      cmd_sweep(resolve(sweep_f), std::cerr);
    } else if (*synth_cmd) {
      cmd_synth(resolve(synth_f), std::cerr);
    } else if (*eval_cmd) {
      const auto s = cmd_eval(eval_dir, eval_out.empty() ? eval_dir : eval_out);
      std::cout << format_report(s.model, s.interval_minutes, "specstg")
                << format_report(s.persistence, s.interval_minutes, "persistence", false)
                << format_report(s.gaussian, s.interval_minutes, "gaussian", false);
    } else if (*grad_cmd) {
      return cmd_gradcheck(gc, std::cout) ? kExitOk : kExitFailure;
    } else if (*bench_cmd) {
      for (const auto& r : cmd_bench_specconv(bench, bench_csv)) {
        std::cout << "N=" << r.nodes << "  spec_conv " << r.spec_conv_us << " us  dense "
                  << r.dense_us << " us";
        if (r.spec_ratio > 0.0) {
          std::cout << "  ratios " << r.spec_ratio << " / " << r.dense_ratio;
        }
        std::cout << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}
