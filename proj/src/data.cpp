#include "specstg/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace specstg {

namespace {

std::chrono::sys_days to_days(const Timestamp& ts) {
  using namespace std::chrono;
  const year_month_day ymd{year{ts.year}, month{ts.month}, day{ts.day}};
  if (!ymd.ok()) throw ConfigError("invalid calendar date " + ts.str());
  return sys_days{ymd};
}

}  // namespace

Timestamp Timestamp::parse(const std::string& text) {
  Timestamp ts;
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0;
  const int n = std::sscanf(text.c_str(), "%d-%u-%u %u:%u", &y, &mo, &d, &h, &mi);
  if (n != 3 && n != 5) throw ConfigError("cannot parse timestamp '" + text + "'");
  ts.year = y;
  ts.month = mo;
  ts.day = d;
  ts.hour = n == 5 ? h : 0;
  ts.minute = n == 5 ? mi : 0;
  if (ts.hour > 23 || ts.minute > 59) throw ConfigError("invalid time of day in '" + text + "'");
  to_days(ts);
  return ts;
}

std::string Timestamp::str() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02u:%02u", year, month, day, hour, minute);
  return buf;
}

Matrix ZScore::normalize(const Matrix& x) const {
  return ((x.array() - mean) / std).matrix();
}

Matrix ZScore::denormalize(const Matrix& z) const { return (z.array() * std + mean).matrix(); }

Matrix read_values_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open values file: " + path);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> bad_cells;  // first few offenders
  std::size_t bad_count = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    std::size_t col = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size() && cell.find_first_not_of(" \t", used) != std::string::npos) {
          throw std::invalid_argument("trailing characters");
        }
      } catch (const std::logic_error&) {
        v = std::nan("");
      }
      if (!std::isfinite(v)) {
        if (bad_cells.size() < 10) {
          bad_cells.push_back("(" + std::to_string(rows.size()) + "," + std::to_string(col) + ")");
        }
        ++bad_count;
      }
      row.push_back(v);
      ++col;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": ragged row with " +
                        std::to_string(row.size()) + " columns, expected " +
                        std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (bad_count > 0) {
    std::string listed;
    for (const auto& c : bad_cells) listed += (listed.empty() ? "" : " ") + c;
    throw FormatError(path + ": " + std::to_string(bad_count) +
                      " non-finite cells (node,step): " + listed);
  }
  if (rows.empty()) throw FormatError("values file is empty: " + path);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

void write_values_csv(const std::string& path, const Matrix& values) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << values(r, c);
    }
    out << '\n';
  }
}

StgDataset make_dataset(Matrix values, StgGraph graph, int interval_minutes,
                        const Timestamp& start) {
  if (static_cast<std::size_t>(values.rows()) != graph.num_nodes()) {
    throw FormatError("values have " + std::to_string(values.rows()) + " nodes, graph has " +
                      std::to_string(graph.num_nodes()));
  }
  if (interval_minutes <= 0 || 1440 % interval_minutes != 0) {
    throw ConfigError("interval must divide a day evenly, got " +
                      std::to_string(interval_minutes));
  }
  FourierBasis basis = fourier_basis(graph);
  return StgDataset{std::move(values), interval_minutes, start, std::move(graph),
                    std::move(basis)};
}

StgDataset load_dataset(const std::string& values_path, const std::string& graph_path,
                        int interval_minutes, const Timestamp& start,
                        const GraphOptions& graph_options) {
  Matrix values = read_values_csv(values_path);
  const auto edges = read_distance_csv(graph_path);
  const auto n = static_cast<std::size_t>(values.rows());
  for (const auto& e : edges) {
    if (e.from >= n || e.to >= n) {
      throw FormatError("graph references node " + std::to_string(std::max(e.from, e.to)) +
                        " but values have " + std::to_string(n) + " nodes");
    }
  }
  StgGraph graph = build_graph(edges, n, graph_options);
  return make_dataset(std::move(values), std::move(graph), interval_minutes, start);
}

DataSplit split_and_normalize(const StgDataset& ds, std::size_t context, std::size_t horizon,
                              const SplitRatios& ratios) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  const auto t = ds.num_steps();
  const auto cut = [t](double frac) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(t) * frac + 1e-9));
  };
  DataSplit split;
  split.train = {0, cut(ratios.train)};
  split.val = {split.train.end, cut(ratios.train + ratios.val)};
  split.test = {split.val.end, t};
  const auto need = context + horizon;
  for (const auto* r : {&split.train, &split.val, &split.test}) {
    if (r->size() < need) {
      throw ConfigError("split of length " + std::to_string(r->size()) +
                        " is shorter than context + horizon = " + std::to_string(need));
    }
  }
  const auto train = ds.values.middleCols(0, static_cast<Eigen::Index>(split.train.size()));
  split.stats.mean = train.mean();
  const double var = (train.array() - split.stats.mean).square().mean();
  split.stats.std = std::sqrt(var);
  if (split.stats.std < 1e-12) split.stats.std = 1.0;
  return split;
}

std::vector<int> time_codes(const StgDataset& ds, std::size_t index,
                            const TimeFeatureConfig& cfg) {
  using namespace std::chrono;
  const long long minutes = static_cast<long long>(ds.start.hour) * 60 + ds.start.minute +
                            static_cast<long long>(index) * ds.interval_minutes;
  const long long day_offset = minutes / 1440;
  const long long minute_of_day = minutes % 1440;
  const sys_days day = to_days(ds.start) + days{day_offset};
  std::vector<int> codes;
  if (cfg.day_of_week) codes.push_back(static_cast<int>(weekday{day}.iso_encoding()) - 1);
  if (cfg.week_of_month) {
    const year_month_day ymd{day};
    codes.push_back(static_cast<int>((static_cast<unsigned>(ymd.day()) - 1) / 7));
  }
  if (cfg.time_of_day) codes.push_back(static_cast<int>(minute_of_day / ds.interval_minutes));
  return codes;
}

std::vector<double> scale_time_codes(const std::vector<int>& codes, const StgDataset& ds,
                                     const TimeFeatureConfig& cfg) {
  std::vector<double> out;
  std::size_t i = 0;
  if (cfg.day_of_week) out.push_back(codes[i++] / 6.0);
  if (cfg.week_of_month) out.push_back(codes[i++] / 4.0);
  if (cfg.time_of_day) {
    const int slots = 1440 / ds.interval_minutes;
    out.push_back(slots > 1 ? codes[i++] / static_cast<double>(slots - 1) : 0.0);
  }
  return out;
}

std::vector<SeriesWindow> make_windows(const StgDataset& ds, const ZScore& stats,
                                       const IndexRange& range, std::size_t context,
                                       std::size_t horizon, std::size_t stride,
                                       const TimeFeatureConfig& features) {
  if (context == 0 || horizon == 0 || stride == 0) {
    throw ConfigError("context, horizon and stride must be positive");
  }
  if (range.end > ds.num_steps() || range.size() < context + horizon) {
    throw ConfigError("range of length " + std::to_string(range.size()) +
                      " cannot hold a window of " + std::to_string(context + horizon));
  }
  const auto count = (range.size() - context - horizon) / stride + 1;
  std::vector<SeriesWindow> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    SeriesWindow win;
    win.start = range.begin + w * stride;
    const auto s = static_cast<Eigen::Index>(win.start);
    win.context = stats.normalize(Matrix(ds.values.middleCols(s, static_cast<Eigen::Index>(context))));
    win.future = stats.normalize(Matrix(
        ds.values.middleCols(s + static_cast<Eigen::Index>(context), static_cast<Eigen::Index>(horizon))));
    for (std::size_t i = 0; i < context + horizon; ++i) {
      win.time_codes.push_back(time_codes(ds, win.start + i, features));
    }
    out.push_back(std::move(win));
  }
  return out;
}

SpectralWindow to_spectral(const StgDataset& ds, const SeriesWindow& window,
                           const TimeFeatureConfig& features) {
  SpectralWindow sw;
  sw.start = window.start;
  sw.context = fourier_transform(ds.basis, window.context);
  sw.future = fourier_transform(ds.basis, window.future);
  const auto f = static_cast<Eigen::Index>(features.count());
  sw.features.resize(static_cast<Eigen::Index>(window.time_codes.size()), f);
  for (std::size_t i = 0; i < window.time_codes.size(); ++i) {
    const auto scaled = scale_time_codes(window.time_codes[i], ds, features);
    for (Eigen::Index j = 0; j < f; ++j) {
      sw.features(static_cast<Eigen::Index>(i), j) = scaled[static_cast<std::size_t>(j)];
    }
  }
  return sw;
}

SpectralCache::SpectralCache(const StgDataset& ds, const std::vector<SeriesWindow>& windows,
                             const TimeFeatureConfig& features) {
  windows_.reserve(windows.size());
  for (const auto& w : windows) windows_.push_back(to_spectral(ds, w, features));
}

StgDataset synth_dataset(std::size_t num_nodes, std::size_t num_steps, std::uint64_t seed) {
  if (num_nodes < 2) throw ConfigError("synthetic dataset needs at least 2 nodes");
  if (num_steps < 200) throw ConfigError("synthetic dataset needs at least 200 steps");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Edge> edges;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto add_edge = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    const auto key = std::minmax(a, b);
    if (!seen.insert(key).second) return;
    edges.push_back({key.first, key.second, 1.0 + 4.0 * unif(rng)});
  };
  for (std::size_t i = 0; i < num_nodes; ++i) add_edge(i, (i + 1) % num_nodes);
  const std::size_t chords = num_nodes / 2;
  std::uniform_int_distribution<std::size_t> pick(0, num_nodes - 1);
  for (std::size_t c = 0; c < chords; ++c) add_edge(pick(rng), pick(rng));
  StgGraph graph = build_graph(edges, num_nodes, {true, EdgeWeighting::kBinary});

  const auto n = static_cast<Eigen::Index>(num_nodes);
  const auto t_len = static_cast<Eigen::Index>(num_steps);
  constexpr double kPeriod = 288.0;  // one day of 5-minute steps
  constexpr double kPi = 3.14159265358979323846;
  Vector base(n), amplitude(n), phase(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    base(i) = 40.0 + 20.0 * unif(rng);
    amplitude(i) = 6.0 + 6.0 * unif(rng);
    phase(i) = 0.3 * unif(rng);
  }
  // Row-normalized adjacency averages each node's neighbors.
  Matrix avg = graph.adjacency();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = graph.degree()(i);
    if (d > 0) avg.row(i) /= d;
  }
  const double phi1 = 0.6, phi2 = 0.25, coupling = 0.5, noise = 1.5;
  Vector z1 = Vector::Zero(n), z2 = Vector::Zero(n);
  Matrix values(n, t_len);
  const Eigen::Index burn_in = 100;
  for (Eigen::Index t = -burn_in; t < t_len; ++t) {
    Vector z = phi1 * z1 + phi2 * z2;
    z = (1.0 - coupling) * z + coupling * (avg * z);
    for (Eigen::Index i = 0; i < n; ++i) z(i) += noise * gauss(rng);
    z2 = z1;
    z1 = z;
    if (t < 0) continue;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double daily =
          amplitude(i) * std::sin(2.0 * kPi * static_cast<double>(t) / kPeriod + phase(i));
      values(i, t) = base(i) + daily + z(i);
    }
  }
  return make_dataset(std::move(values), std::move(graph), 5, Timestamp{2018, 1, 1, 0, 0});
}

}  // namespace specstg
