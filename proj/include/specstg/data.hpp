#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "specstg/graph.hpp"

namespace specstg {

// Calendar position of the first sample. Day-of-week and week-of-month are
// derived with plain civil-calendar arithmetic (no time zones).
struct Timestamp {
  int year = 2018;
  unsigned month = 1;
  unsigned day = 1;
  unsigned hour = 0;
  unsigned minute = 0;

  // "YYYY-MM-DD HH:MM" or "YYYY-MM-DD".
  static Timestamp parse(const std::string& text);
  std::string str() const;
};

struct ZScore {
  double mean = 0.0;
  double std = 1.0;

  double normalize(double x) const { return (x - mean) / std; }
  double denormalize(double z) const { return z * std + mean; }
  Matrix normalize(const Matrix& x) const;
  Matrix denormalize(const Matrix& z) const;
};

struct StgDataset {
  Matrix values;  // N x T, raw units
  int interval_minutes = 5;
  Timestamp start;
  StgGraph graph;
  FourierBasis basis;

  std::size_t num_nodes() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t num_steps() const { return static_cast<std::size_t>(values.cols()); }
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

struct DataSplit {
  IndexRange train, val, test;
  ZScore stats;  // computed on the training range only
};

struct TimeFeatureConfig {
  bool day_of_week = true;
  bool week_of_month = true;
  bool time_of_day = true;
  // Apply U^T to the node-constant feature columns before concatenation;
  // otherwise append them raw.
  bool transform = true;

  std::size_t count() const {
    return static_cast<std::size_t>(day_of_week) + static_cast<std::size_t>(week_of_month) +
           static_cast<std::size_t>(time_of_day);
  }
};

struct SeriesWindow {
  std::size_t start = 0;  // index of the first context step in the dataset
  Matrix context;         // N x c
  Matrix future;          // N x f
  // (c + f) x F integer codes in the enabled order: day of week (0 = Monday),
  // week of month (0..4), time-of-day slot.
  std::vector<std::vector<int>> time_codes;
};

struct SpectralWindow {
  std::size_t start = 0;
  Matrix context;  // N x c
  Matrix future;   // N x f
  Matrix features;  // (c + f) x F, min-max scaled codes
};

// Values CSV: one row per node, T comma-separated columns, no header.
Matrix read_values_csv(const std::string& path);
void write_values_csv(const std::string& path, const Matrix& values);

// Graph is read from the distance list and built with `graph_options`.
StgDataset load_dataset(const std::string& values_path, const std::string& graph_path,
                        int interval_minutes, const Timestamp& start,
                        const GraphOptions& graph_options = {true, EdgeWeighting::kBinary});

StgDataset make_dataset(Matrix values, StgGraph graph, int interval_minutes,
                        const Timestamp& start);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

// Chronological split; every part must hold at least context + horizon steps.
DataSplit split_and_normalize(const StgDataset& ds, std::size_t context, std::size_t horizon,
                              const SplitRatios& ratios = {});

// Integer calendar codes for absolute step `index`.
std::vector<int> time_codes(const StgDataset& ds, std::size_t index,
                            const TimeFeatureConfig& cfg);
// Codes scaled to [0, 1] by their fixed ranges.
std::vector<double> scale_time_codes(const std::vector<int>& codes, const StgDataset& ds,
                                     const TimeFeatureConfig& cfg);

// Sliding windows over `range` of normalized values. Count is
// floor((len - c - f) / stride) + 1.
std::vector<SeriesWindow> make_windows(const StgDataset& ds, const ZScore& stats,
                                       const IndexRange& range, std::size_t context,
                                       std::size_t horizon, std::size_t stride,
                                       const TimeFeatureConfig& features = {});

SpectralWindow to_spectral(const StgDataset& ds, const SeriesWindow& window,
                           const TimeFeatureConfig& features = {});

// Spectral windows precomputed once; lookups return the cached transform.
class SpectralCache {
 public:
  SpectralCache(const StgDataset& ds, const std::vector<SeriesWindow>& windows,
                const TimeFeatureConfig& features);
  std::size_t size() const { return windows_.size(); }
  const SpectralWindow& operator[](std::size_t i) const { return windows_[i]; }
  const std::vector<SpectralWindow>& all() const { return windows_; }

 private:
  std::vector<SpectralWindow> windows_;
};

// Random connected graph (ring plus chords) carrying coupled AR(2) series
// with a daily cycle and Gaussian noise. Reproducible by seed.
StgDataset synth_dataset(std::size_t num_nodes, std::size_t num_steps, std::uint64_t seed);

}  // namespace specstg
