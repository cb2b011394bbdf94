#include "specstg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace specstg {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": prediction is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", truth is " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

PointErrors rmse(const Matrix& pred, const Matrix& truth) {
  require_same_shape(pred, truth, "rmse");
  PointErrors out;
  for (Eigen::Index t = 0; t < pred.cols(); ++t) {
    out.per_step.push_back(std::sqrt((pred.col(t) - truth.col(t)).array().square().mean()));
  }
  out.value = mean_of(out.per_step);
  return out;
}

PointErrors mae(const Matrix& pred, const Matrix& truth) {
  require_same_shape(pred, truth, "mae");
  PointErrors out;
  for (Eigen::Index t = 0; t < pred.cols(); ++t) {
    out.per_step.push_back((pred.col(t) - truth.col(t)).array().abs().mean());
  }
  out.value = mean_of(out.per_step);
  return out;
}

const std::vector<double>& crps_levels() {
  static const std::vector<double> levels = [] {
    std::vector<double> v;
    for (int i = 1; i <= 19; ++i) v.push_back(0.05 * i);
    return v;
  }();
  return levels;
}

double empirical_quantile(const std::vector<double>& sorted, double level) {
  if (sorted.empty()) throw UsageError("quantile of an empty sample");
  const double pos = level * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double crps_empirical(std::vector<double> samples, double x) {
  if (samples.size() < 2) throw UsageError("CRPS needs at least 2 samples");
  std::sort(samples.begin(), samples.end());
  const auto& levels = crps_levels();
  double total = 0.0;
  for (double q : levels) {
    const double qhat = empirical_quantile(samples, q);
    const double indicator = x < qhat ? 1.0 : 0.0;
    total += (q - indicator) * (x - qhat);
  }
  return 2.0 * total / static_cast<double>(levels.size());
}

namespace {

// Sum over nodes of CRPS and of |truth| for one step.
std::pair<double, double> crps_step_sums(const std::vector<Matrix>& samples, const Matrix& truth,
                                         Eigen::Index t) {
  double num = 0.0, den = 0.0;
  std::vector<double> draws(samples.size());
  for (Eigen::Index node = 0; node < truth.rows(); ++node) {
    for (std::size_t s = 0; s < samples.size(); ++s) draws[s] = samples[s](node, t);
    num += crps_empirical(draws, truth(node, t));
    den += std::abs(truth(node, t));
  }
  return {num, den};
}

}  // namespace

double crps_normalized(const Matrix& samples, const Vector& truth) {
  if (samples.cols() != truth.size()) throw ShapeError("crps_normalized: node count mismatch");
  double num = 0.0, den = 0.0;
  std::vector<double> draws(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index node = 0; node < truth.size(); ++node) {
    for (Eigen::Index s = 0; s < samples.rows(); ++s) {
      draws[static_cast<std::size_t>(s)] = samples(s, node);
    }
    num += crps_empirical(draws, truth(node));
    den += std::abs(truth(node));
  }
  if (den == 0.0) throw UsageError("normalized CRPS undefined: all observations are zero");
  return num / den;
}

double crps_avg(const std::vector<Matrix>& samples, const Matrix& truth) {
  if (samples.size() < 2) throw UsageError("CRPS needs at least 2 samples");
  for (const auto& s : samples) require_same_shape(s, truth, "crps_avg");
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < truth.cols(); ++t) {
    const auto [n, d] = crps_step_sums(samples, truth, t);
    num += n;
    den += d;
  }
  if (den == 0.0) throw UsageError("CRPS Avg. undefined: all observations are zero");
  return num / den;
}

WindowMetrics window_metrics(std::size_t window_id, const std::vector<Matrix>& samples,
                             const Matrix& predictions, const Matrix& truth) {
  WindowMetrics w;
  w.window_id = window_id;
  w.rmse = rmse(predictions, truth);
  w.mae = mae(predictions, truth);
  if (samples.size() < 2) throw UsageError("CRPS needs at least 2 samples");
  for (const auto& s : samples) require_same_shape(s, truth, "crps");
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < truth.cols(); ++t) {
    const auto [n, d] = crps_step_sums(samples, truth, t);
    num += n;
    den += d;
    if (d == 0.0) {
      w.crps_per_step.push_back(std::numeric_limits<double>::quiet_NaN());
      ++w.crps_undefined_steps;
    } else {
      w.crps_per_step.push_back(n / d);
    }
  }
  if (den == 0.0) throw UsageError("CRPS Avg. undefined for window " + std::to_string(window_id));
  w.crps = num / den;
  return w;
}

EvalReport evaluate(const std::vector<std::vector<Matrix>>& samples,
                    const std::vector<Matrix>& predictions, const std::vector<Matrix>& truths,
                    const std::vector<std::size_t>& point_steps) {
  if (predictions.size() != truths.size() || samples.size() != truths.size()) {
    throw UsageError("evaluate: " + std::to_string(predictions.size()) + " forecasts, " +
                     std::to_string(samples.size()) + " sample sets, " +
                     std::to_string(truths.size()) + " truths");
  }
  if (truths.empty()) throw UsageError("evaluate: no windows");
  EvalReport report;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i].rows() != truths[i].rows() || predictions[i].cols() != truths[i].cols()) {
      throw UsageError("evaluate: window " + std::to_string(i) + " is misaligned with its truth");
    }
    report.windows.push_back(window_metrics(i, samples[i], predictions[i], truths[i]));
    report.crps_undefined += report.windows.back().crps_undefined_steps;
  }
  std::vector<double> r, m, c;
  for (const auto& w : report.windows) {
    r.push_back(w.rmse.value);
    m.push_back(w.mae.value);
    c.push_back(w.crps);
  }
  report.rmse_avg = mean_of(r);
  report.mae_avg = mean_of(m);
  report.crps_avg = mean_of(c);
  const auto horizon = static_cast<std::size_t>(truths.front().cols());
  for (std::size_t step : point_steps) {
    if (step == 0 || step > horizon) continue;
    HorizonPoint p;
    p.step = step;
    std::vector<double> pr, pm, pc;
    for (const auto& w : report.windows) {
      pr.push_back(w.rmse.per_step[step - 1]);
      pm.push_back(w.mae.per_step[step - 1]);
      const double v = w.crps_per_step[step - 1];
      if (!std::isnan(v)) pc.push_back(v);
    }
    p.rmse = mean_of(pr);
    p.mae = mean_of(pm);
    p.crps = pc.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(pc);
    report.points.push_back(p);
  }
  return report;
}

void write_report_csv(const std::string& path,
                      const std::vector<std::pair<std::string, EvalReport>>& reports,
                      int interval_minutes) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(10);
  out << "model,metric,horizon,value\n";
  for (const auto& [name, report] : reports) {
    out << name << ",rmse,avg," << report.rmse_avg << "\n";
    out << name << ",mae,avg," << report.mae_avg << "\n";
    out << name << ",crps,avg," << report.crps_avg << "\n";
    for (const auto& p : report.points) {
      const auto label =
          std::to_string(p.step * static_cast<std::size_t>(interval_minutes)) + "min";
      out << name << ",rmse," << label << ',' << p.rmse << "\n";
      out << name << ",mae," << label << ',' << p.mae << "\n";
      out << name << ",crps," << label << ',' << p.crps << "\n";
    }
    out << name << ",crps_undefined_steps,all," << report.crps_undefined << "\n";
  }
}

void write_window_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(10);
  out << "window_id,rmse,mae,crps\n";
  for (const auto& w : report.windows) {
    out << w.window_id << ',' << w.rmse.value << ',' << w.mae.value << ',' << w.crps << "\n";
  }
}

std::string format_report(const EvalReport& report, int interval_minutes,
                          const std::string& label, bool header) {
  std::vector<std::string> heads{"Avg."};
  for (const auto& p : report.points) {
    heads.push_back(std::to_string(p.step * static_cast<std::size_t>(interval_minutes)) + "min");
  }
  std::ostringstream os;
  const int w = 10;
  if (header) {
    os << std::left << std::setw(12) << "" << std::right;
    for (const char* metric : {"RMSE", "MAE", "CRPS"}) {
      os << " | " << std::setw(static_cast<int>(heads.size()) * w) << metric;
    }
    os << "\n" << std::left << std::setw(12) << "" << std::right;
    for (int g = 0; g < 3; ++g) {
      os << " | ";
      for (const auto& h : heads) os << std::setw(w) << h;
    }
    os << "\n";
  }
  os << std::left << std::setw(12) << label << std::right << std::fixed;
  auto group = [&](double avg, auto getter, int precision) {
    os << " | " << std::setprecision(precision) << std::setw(w) << avg;
    for (const auto& p : report.points) os << std::setw(w) << getter(p);
  };
  group(report.rmse_avg, [](const HorizonPoint& p) { return p.rmse; }, 3);
  group(report.mae_avg, [](const HorizonPoint& p) { return p.mae; }, 3);
  group(report.crps_avg, [](const HorizonPoint& p) { return p.crps; }, 4);
  os << "\n";
  return os.str();
}

Matrix persistence_forecast(const Matrix& context, std::size_t horizon) {
  if (context.cols() == 0) throw UsageError("persistence needs at least one context step");
  return context.col(context.cols() - 1).replicate(1, static_cast<Eigen::Index>(horizon));
}

double persistence_error_scale(const Matrix& values, std::size_t horizon) {
  double ss = 0.0;
  double count = 0.0;
  for (std::size_t h = 1; h <= horizon; ++h) {
    const auto lag = static_cast<Eigen::Index>(h);
    if (lag >= values.cols()) break;
    const auto span = values.cols() - lag;
    ss += (values.rightCols(span) - values.leftCols(span)).squaredNorm();
    count += static_cast<double>(span * values.rows());
  }
  if (count == 0.0) throw UsageError("series too short for a persistence error scale");
  return std::sqrt(ss / count);
}

std::vector<Matrix> gaussian_samples(const Matrix& center, double width, std::size_t count,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Matrix m = center;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += width * gauss(rng);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace specstg
