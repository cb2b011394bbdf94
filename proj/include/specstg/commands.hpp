#pragma once

#include <cstdint>
#include <exception>
#include <ostream>
#include <string>
#include <vector>

#include "specstg/config.hpp"
#include "specstg/gradcheck.hpp"
#include "specstg/metrics.hpp"

namespace specstg {

// Exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // unexpected error or failed check
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
  kExitNodeMismatch = 5,
  kExitMisaligned = 6,
};

int exit_code_for(const std::exception& e);

struct LoadedData {
  StgDataset dataset;
  DataSplit split;
  std::string hash;  // hex digest of values, adjacency and calendar metadata
};

// Reads the configured files or generates the synthetic dataset, then splits.
LoadedData load_data(const RunConfig& cfg);

std::string data_hash(const StgDataset& ds);

// Writes {"command", "data_hash", "resolved_config"} to `path`.
void write_snapshot(const std::string& path, const std::string& command, const RunConfig& cfg,
                    const std::string& hash);

struct TrainSummary {
  TrainResult result;
  std::string checkpoint;
  std::string log;
};

// Files in cfg.output_dir: checkpoint.json (or cfg.checkpoint), train_log.csv,
// train_summary.json, train_config.json.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& progress);

struct ForecastSummary {
  std::size_t windows = 0;
  std::size_t nodes = 0;
  std::size_t horizon = 0;
  std::size_t samples = 0;
  std::string forecast_csv;
};

// Files in cfg.output_dir: forecast.csv, truth.csv, persistence.csv,
// forecast_meta.json, forecast_config.json and, when dump_samples is set,
// samples.bin. Throws NodeMismatchError when the checkpoint was trained on a
// different node count.
ForecastSummary cmd_forecast(const RunConfig& cfg, std::ostream& progress);

struct EvalSummary {
  EvalReport model;
  EvalReport persistence;
  EvalReport gaussian;
  int interval_minutes = 5;
};

// Reads the files written by cmd_forecast from `forecast_dir` and writes
// report.csv, windows.csv and report.txt to `out_dir`. Throws AlignmentError
// when forecast, samples and truth disagree.
EvalSummary cmd_eval(const std::string& forecast_dir, const std::string& out_dir);

// Returns true when every layer passes.
bool cmd_gradcheck(const GradCheckOptions& opts, std::ostream& report);

struct BenchRow {
  std::size_t nodes = 0;
  double spec_conv_us = 0.0;
  double dense_us = 0.0;
  double spec_ratio = 0.0;   // against the previous size, 0 for the first
  double dense_ratio = 0.0;
};

struct BenchOptions {
  std::vector<std::size_t> sizes{250, 500, 1000, 2000};
  std::size_t channels = 8;
  std::size_t order = 3;
  std::size_t calls = 100;
  std::size_t repeats = 5;  // best of `repeats` averages
  std::uint64_t seed = 3;
};

// Times spec_conv against the dense vertex-domain Chebyshev convolution on
// random orthonormal bases.
std::vector<BenchRow> cmd_bench_specconv(const BenchOptions& opts, const std::string& csv_path);

struct SweepCell {
  double beta_k = 0.0;
  std::size_t num_steps = 0;
  double best_val_loss = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double crps = 0.0;
};

struct SweepSpread {
  std::string metric;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double relative = 0.0;  // (max - min) / mean
};

struct SweepSummary {
  std::vector<SweepCell> cells;
  std::vector<SweepSpread> spread;
};

// Trains and evaluates one model per (beta_K, K) cell with a shared seed.
// Files: sweep.csv, sweep_rmse.csv, sweep_mae.csv, sweep_crps.csv (grids with
// beta_K rows and K columns), sweep_spread.csv.
SweepSummary cmd_sweep(const RunConfig& cfg, std::ostream& progress);

// Writes values.csv and graph.csv (distance list) for the synthetic dataset.
void cmd_synth(const RunConfig& cfg, std::ostream& progress);

}  // namespace specstg
