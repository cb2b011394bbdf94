#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <string>
#include <vector>

#include "specstg/tensor.hpp"

namespace specstg {

// Deterministic errors of one window. Per-step values reduce over nodes by
// the mean: rmse_t = sqrt(mean_n err^2), mae_t = mean_n |err|. The window
// value averages the per-step values over the horizon.
struct PointErrors {
  double value = 0.0;
  std::vector<double> per_step;
};

PointErrors rmse(const Matrix& pred, const Matrix& truth);
PointErrors mae(const Matrix& pred, const Matrix& truth);

// Quantile levels 0.05, 0.10, ..., 0.95.
const std::vector<double>& crps_levels();

// Empirical quantile with linear interpolation between order statistics
// (`sorted` ascending).
double empirical_quantile(const std::vector<double>& sorted, double level);

// (2 / |Q|) * sum_q pinball_q(x, quantile_q(samples)).
double crps_empirical(std::vector<double> samples, double x);

// samples: S x N at one time step; truth: length N.
// Returns sum_n CRPS / sum_n |x|; throws UsageError when the denominator is 0.
double crps_normalized(const Matrix& samples, const Vector& truth);

// samples: S entries of N x f; truth N x f. sum_{t,n} CRPS / sum_{t,n} |x|.
double crps_avg(const std::vector<Matrix>& samples, const Matrix& truth);

struct WindowMetrics {
  std::size_t window_id = 0;
  PointErrors rmse;
  PointErrors mae;
  double crps = 0.0;                 // CRPS Avg. of the window
  std::vector<double> crps_per_step;  // normalized CRPS per step (NaN when undefined)
  std::size_t crps_undefined_steps = 0;
};

struct HorizonPoint {
  std::size_t step = 0;  // 1-based
  double rmse = 0.0;
  double mae = 0.0;
  double crps = 0.0;
};

struct EvalReport {
  double rmse_avg = 0.0;
  double mae_avg = 0.0;
  double crps_avg = 0.0;
  std::vector<HorizonPoint> points;  // 15/30/60 minutes at 5-minute steps
  std::vector<WindowMetrics> windows;
  std::size_t crps_undefined = 0;  // per-step normalized CRPS excluded (zero truth)
};

WindowMetrics window_metrics(std::size_t window_id, const std::vector<Matrix>& samples,
                             const Matrix& predictions, const Matrix& truth);

// predictions/truths: one N x f matrix per window; samples: per window, S
// matrices of N x f. Point metrics read 1-based steps in `point_steps`
// (default 3, 6, 12) when the horizon is long enough.
EvalReport evaluate(const std::vector<std::vector<Matrix>>& samples,
                    const std::vector<Matrix>& predictions, const std::vector<Matrix>& truths,
                    const std::vector<std::size_t>& point_steps = {3, 6, 12});

// Long format `model,metric,horizon,value`, one block per labelled report.
void write_report_csv(const std::string& path,
                      const std::vector<std::pair<std::string, EvalReport>>& reports,
                      int interval_minutes);
void write_window_csv(const std::string& path, const EvalReport& report);
// Aligned text table with RMSE / MAE / CRPS column groups (avg and points).
std::string format_report(const EvalReport& report, int interval_minutes,
                          const std::string& label = "model", bool header = true);

// Baselines. Persistence repeats the last context column over the horizon.
Matrix persistence_forecast(const Matrix& context, std::size_t horizon);
// Root mean square of h-step persistence errors for h = 1..horizon over the
// columns of `values` (N x T); the width of the Gaussian baseline.
double persistence_error_scale(const Matrix& values, std::size_t horizon);
// `count` draws of center + width * e, e ~ N(0, 1) i.i.d.
std::vector<Matrix> gaussian_samples(const Matrix& center, double width, std::size_t count,
                                     std::uint64_t seed);

}  // namespace specstg
