#pragma once

#include <cstdint>
#include <string>

#include "specstg/diffusion.hpp"

namespace specstg {

// Where the series comes from: files on disk, or the synthetic generator
// when `values` is empty.
struct DataSource {
  std::string values;
  std::string graph;
  int interval_minutes = 5;
  std::string start = "2018-01-01 00:00";
  // "binary" | "inverse_distance" | "raw"
  std::string weighting = "binary";
  bool symmetrize = true;
  SplitRatios ratios;
  std::size_t synth_nodes = 20;
  std::size_t synth_steps = 2000;
  std::uint64_t synth_seed = 7;
};

struct SweepGrid {
  std::vector<double> beta_k{0.1, 0.2, 0.3, 0.4};
  std::vector<std::size_t> num_steps{50, 100, 200};
};

struct RunConfig {
  TrainerConfig trainer;
  DataSource data;
  SweepGrid sweep;
  std::string output_dir;
  std::string checkpoint;  // empty: <output_dir>/checkpoint.json
  bool dump_samples = true;
  // Windows evaluated by forecast; 0 means all.
  std::size_t max_windows = 0;
};

// Default output directory: $SPECSTG_OUT_DIR, else "specstg_out".
std::string default_output_dir();

// Parses a config document. Unknown keys (at any level) raise ConfigError;
// missing keys keep their defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Throws ConfigError when fields are out of range or inconsistent.
void validate_config(const RunConfig& cfg);

// Applies a single `key=value` override; `key` may use dots for nested
// objects (e.g. data.values=flow.csv). The value is parsed as JSON, falling
// back to a plain string.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Full document with every field, suitable for reproducing a run.
std::string config_to_json(const RunConfig& cfg, int indent = 2);

}  // namespace specstg
