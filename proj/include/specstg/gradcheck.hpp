#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "specstg/tensor.hpp"

namespace specstg {

struct GradCheckOptions {
  double step = 1e-5;       // central difference half-width
  double tolerance = 1e-4;  // max allowed relative error
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
  double fraction = 0.01;   // share of entries sampled per parameter
  std::size_t min_per_param = 3;
  std::uint64_t seed = 11;
};

struct GradCheckResult {
  std::string layer;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  bool passed = false;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// `loss` must be deterministic and rebuild the graph on every call. The
// analytic gradient comes from one backward pass; each sampled entry is then
// perturbed in place and restored.
GradCheckResult check_gradients(const std::string& layer, const std::function<Tensor()>& loss,
                                const NamedTensors& params, const GradCheckOptions& opts = {});

// SpecConv, SG-GRU step, one SG-Wave block and the full denoising loss at
// N = 4, each on a fresh random initialization.
std::vector<GradCheckResult> check_all_layers(const GradCheckOptions& opts = {});

// One line per layer: name, entries checked, max relative error, status.
std::string format_gradcheck(const std::vector<GradCheckResult>& results);

}  // namespace specstg
