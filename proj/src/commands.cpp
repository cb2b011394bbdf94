#include "specstg/commands.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

namespace specstg {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NodeMismatchError*>(&e)) return kExitNodeMismatch;
  if (dynamic_cast<const AlignmentError*>(&e)) return kExitMisaligned;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const InputError*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitDivergence;
  return kExitFailure;
}

namespace {

const char* kSampleMagic = "SPSTGSMP";

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

void write_json(const std::string& path, const Json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << "\n";
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path + ": " + e.what());
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": cannot parse '" + text + "' as a number");
  }
}

std::string checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? join(cfg.output_dir, "checkpoint.json") : cfg.checkpoint;
}

NoiseSchedule schedule_for(const TrainerConfig& t) {
  return quadratic_schedule(t.num_steps, t.beta_1, t.beta_k, t.sigma_rule);
}

std::vector<SeriesWindow> windows_for(const LoadedData& d, const IndexRange& range,
                                      const TrainerConfig& t, std::size_t stride,
                                      std::size_t limit = 0) {
  auto w = make_windows(d.dataset, d.split.stats, range, t.context, t.horizon, stride,
                        t.time_features);
  if (limit > 0 && w.size() > limit) w.resize(limit);
  return w;
}

struct TrainedModel {
  SpecStgModel model;
  TrainResult result;
};

TrainedModel train_model(const TrainerConfig& t, const LoadedData& d, std::ostream& progress) {
  const auto train_w = windows_for(d, d.split.train, t, t.train_stride);
  const auto val_w = windows_for(d, d.split.val, t, t.val_stride);
  const SpectralCache train_set(d.dataset, train_w, t.time_features);
  const SpectralCache val_set(d.dataset, val_w, t.time_features);
  TrainedModel out{SpecStgModel(t.model_dims(), t.seed), {}};
  progress << "training on " << train_set.size() << " windows, validating on " << val_set.size()
           << ", " << out.model.params().num_scalars() << " parameters\n";
  out.result = train(out.model, schedule_for(t), d.dataset.basis, train_set, val_set, t,
                     [&](const EpochRecord& e) {
                       progress << "epoch " << e.epoch << "/" << t.epochs << "  train "
                                << e.train_loss << "  val " << e.val_loss << "  ("
                                << std::fixed << std::setprecision(1) << e.seconds << " s)"
                                << std::defaultfloat << std::setprecision(6) << "\n";
                     });
  return out;
}

struct WindowForecasts {
  std::vector<SeriesWindow> windows;
  std::vector<ForecastResult> results;
};

WindowForecasts forecast_test(const SpecStgModel& model, const TrainerConfig& trained,
                              const RunConfig& cfg, const LoadedData& d) {
  WindowForecasts out;
  out.windows = windows_for(d, d.split.test, trained, cfg.trainer.eval_stride, cfg.max_windows);
  const SpectralCache cache(d.dataset, out.windows, trained.time_features);
  out.results = forecast_all(model, schedule_for(trained), d.dataset.basis, cache, d.split.stats,
                             cfg.trainer.samples, cfg.trainer.seed, trained.time_features,
                             cfg.trainer.threads);
  return out;
}

Matrix truth_of(const LoadedData& d, const SeriesWindow& w) {
  return d.dataset.values.middleCols(static_cast<Eigen::Index>(w.start + w.context.cols()),
                                     w.future.cols());
}

Matrix raw_context(const LoadedData& d, const SeriesWindow& w) {
  return d.dataset.values.middleCols(static_cast<Eigen::Index>(w.start), w.context.cols());
}

double persistence_width(const LoadedData& d, std::size_t horizon) {
  const auto& r = d.split.train;
  return persistence_error_scale(
      d.dataset.values.middleCols(static_cast<Eigen::Index>(r.begin),
                                  static_cast<Eigen::Index>(r.size())),
      horizon);
}

EvalReport evaluate_forecasts(const LoadedData& d, const WindowForecasts& f) {
  std::vector<std::vector<Matrix>> samples;
  std::vector<Matrix> preds, truths;
  for (std::size_t i = 0; i < f.windows.size(); ++i) {
    samples.push_back(f.results[i].samples);
    preds.push_back(f.results[i].predictions);
    truths.push_back(truth_of(d, f.windows[i]));
  }
  return evaluate(samples, preds, truths);
}

// Parses a long-format CSV keyed by (window_id, node, t) into per-window
// matrices of one value column.
struct LongTable {
  std::vector<std::array<std::size_t, 3>> keys;
  std::vector<double> values;
};

LongTable read_long_csv(const std::string& path, const std::string& expected_header,
                        std::size_t value_column) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != expected_header) {
    throw FormatError(path + ": expected header '" + expected_header + "'");
  }
  const auto width = split_csv(expected_header).size();
  LongTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != width) throw FormatError(where + ": expected " + std::to_string(width) + " fields");
    std::array<std::size_t, 3> key{};
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = parse_real(cells[k], where);
      if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw FormatError(where + ": index fields must be non-negative integers");
      }
      key[k] = static_cast<std::size_t>(v);
    }
    t.keys.push_back(key);
    t.values.push_back(parse_real(cells[value_column], where));
  }
  return t;
}

// Folds a table ordered window-major, then node, then step into matrices.
std::vector<Matrix> fold(const LongTable& t, std::size_t windows, std::size_t nodes,
                         std::size_t horizon, const std::string& what) {
  if (t.values.size() != windows * nodes * horizon) {
    throw AlignmentError(what + " has " + std::to_string(t.values.size()) + " rows, expected " +
                         std::to_string(windows * nodes * horizon) + " (windows x nodes x steps)");
  }
  std::vector<Matrix> out(windows, Matrix(static_cast<Eigen::Index>(nodes),
                                          static_cast<Eigen::Index>(horizon)));
  std::size_t i = 0;
  for (std::size_t w = 0; w < windows; ++w) {
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t s = 0; s < horizon; ++s, ++i) {
        if (t.keys[i][0] != w || t.keys[i][1] != n) {
          throw AlignmentError(what + " row " + std::to_string(i + 2) +
                               " is out of window/node order");
        }
        out[w](static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s)) = t.values[i];
      }
    }
  }
  return out;
}

void check_same_keys(const LongTable& a, const LongTable& b, const std::string& what) {
  if (a.keys.size() != b.keys.size()) {
    throw AlignmentError(what + ": " + std::to_string(a.keys.size()) + " forecast rows vs " +
                         std::to_string(b.keys.size()) + " truth rows");
  }
  for (std::size_t i = 0; i < a.keys.size(); ++i) {
    if (a.keys[i] != b.keys[i]) {
      throw AlignmentError(what + ": row " + std::to_string(i + 2) +
                           " refers to a different (window, node, t)");
    }
  }
}

void write_samples(const std::string& path, const std::vector<ForecastResult>& results) {
  auto out = open_out(path);
  const std::uint32_t version = 1;
  const std::uint64_t w = results.size();
  const std::uint64_t s = results.empty() ? 0 : results.front().samples.size();
  const std::uint64_t n = s == 0 ? 0 : static_cast<std::uint64_t>(results.front().samples[0].rows());
  const std::uint64_t f = s == 0 ? 0 : static_cast<std::uint64_t>(results.front().samples[0].cols());
  out.write(kSampleMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  for (std::uint64_t v : {w, s, n, f}) out.write(reinterpret_cast<const char*>(&v), sizeof v);
  for (const auto& r : results) {
    for (const auto& m : r.samples) {
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
  }
}

std::vector<std::vector<Matrix>> read_samples(const std::string& path, std::size_t windows,
                                              std::size_t nodes, std::size_t horizon) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot read " + path + " (run forecast with dump_samples enabled)");
  }
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t dims[4];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, kSampleMagic, 8) != 0 || version != 1) {
    throw FormatError(path + " is not a sample dump");
  }
  if (dims[0] != windows || dims[2] != nodes || dims[3] != horizon) {
    throw AlignmentError("sample dump is " + std::to_string(dims[0]) + " windows x " +
                         std::to_string(dims[2]) + " nodes x " + std::to_string(dims[3]) +
                         " steps, forecast is " + std::to_string(windows) + " x " +
                         std::to_string(nodes) + " x " + std::to_string(horizon));
  }
  std::vector<std::vector<Matrix>> out(windows);
  for (auto& per_window : out) {
    for (std::uint64_t s = 0; s < dims[1]; ++s) {
      Matrix m(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(horizon));
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
      per_window.push_back(std::move(m));
    }
  }
  if (!in) throw FormatError(path + " is truncated");
  return out;
}

Json checkpoint_meta(const RunConfig& cfg, const LoadedData& d, const TrainResult& r) {
  Json meta;
  meta["num_nodes"] = d.dataset.num_nodes();
  meta["data_hash"] = d.hash;
  meta["initial_val_loss"] = r.initial_val_loss;
  meta["best_val_loss"] = r.best_val_loss;
  meta["best_epoch"] = r.best_epoch;
  // Paths are left out so that reruns in other directories match byte for byte.
  RunConfig model_cfg = cfg;
  model_cfg.output_dir.clear();
  model_cfg.checkpoint.clear();
  meta["config"] = Json::parse(config_to_json(model_cfg));
  return meta;
}

}  // namespace

namespace {

StgDataset read_source(const DataSource& src) {
  if (src.values.empty()) return synth_dataset(src.synth_nodes, src.synth_steps, src.synth_seed);
  GraphOptions opts{src.symmetrize, std::nullopt};
  if (src.weighting == "binary") opts.distance_mode = EdgeWeighting::kBinary;
  if (src.weighting == "inverse_distance") opts.distance_mode = EdgeWeighting::kInverseDistance;
  return load_dataset(src.values, src.graph, src.interval_minutes, Timestamp::parse(src.start),
                      opts);
}

}  // namespace

LoadedData load_data(const RunConfig& cfg) {
  LoadedData out{read_source(cfg.data), {}, {}};
  out.split = split_and_normalize(out.dataset, cfg.trainer.context, cfg.trainer.horizon,
                                  cfg.data.ratios);
  out.hash = data_hash(out.dataset);
  return out;
}

std::string data_hash(const StgDataset& ds) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t dims[2] = {ds.num_nodes(), ds.num_steps()};
  feed(dims, sizeof dims);
  feed(ds.values.data(), static_cast<std::size_t>(ds.values.size()) * sizeof(double));
  const Matrix& a = ds.graph.adjacency();
  feed(a.data(), static_cast<std::size_t>(a.size()) * sizeof(double));
  const std::string cal = std::to_string(ds.interval_minutes) + "|" + ds.start.str();
  feed(cal.data(), cal.size());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_snapshot(const std::string& path, const std::string& command, const RunConfig& cfg,
                    const std::string& hash) {
  Json doc;
  doc["command"] = command;
  doc["data_hash"] = hash;
  doc["resolved_config"] = Json::parse(config_to_json(cfg));
  write_json(path, doc);
}

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& progress) {
  cfg.trainer.validate();
  ensure_dir(cfg.output_dir);
  const LoadedData d = load_data(cfg);
  progress << "dataset: " << d.dataset.num_nodes() << " nodes x " << d.dataset.num_steps()
           << " steps, hash " << d.hash << "\n";
  write_snapshot(join(cfg.output_dir, "train_config.json"), "train", cfg, d.hash);
  TrainedModel tm = train_model(cfg.trainer, d, progress);

  TrainSummary s;
  s.result = tm.result;
  s.checkpoint = checkpoint_path(cfg);
  s.log = join(cfg.output_dir, "train_log.csv");
  save_checkpoint(s.checkpoint, tm.model.params(), checkpoint_meta(cfg, d, tm.result).dump());
  write_training_log(s.log, tm.result.log);
  Json summary;
  summary["initial_val_loss"] = tm.result.initial_val_loss;
  summary["best_val_loss"] = tm.result.best_val_loss;
  summary["best_epoch"] = tm.result.best_epoch;
  summary["epochs_run"] = tm.result.log.size();
  summary["data_hash"] = d.hash;
  write_json(join(cfg.output_dir, "train_summary.json"), summary);
  progress << "best validation loss " << tm.result.best_val_loss << " at epoch "
           << tm.result.best_epoch << " (initial " << tm.result.initial_val_loss << ")\n"
           << "checkpoint: " << s.checkpoint << "\n";
  return s;
}

ForecastSummary cmd_forecast(const RunConfig& cfg, std::ostream& progress) {
  ensure_dir(cfg.output_dir);
  const std::string ckpt = checkpoint_path(cfg);
  const Json meta = Json::parse(read_checkpoint_meta(ckpt));
  if (!meta.contains("config") || !meta.contains("num_nodes")) {
    throw FormatError("checkpoint " + ckpt + " lacks its training configuration");
  }
  // Architecture, schedule and window lengths come from the checkpoint.
  const RunConfig trained = parse_config(meta.at("config").dump());
  const TrainerConfig& tt = trained.trainer;

  RunConfig run = cfg;
  run.trainer.context = tt.context;
  run.trainer.horizon = tt.horizon;
  const LoadedData d = load_data(run);
  const auto ck_nodes = meta.at("num_nodes").get<std::size_t>();
  if (ck_nodes != d.dataset.num_nodes()) throw NodeMismatchError(ck_nodes, d.dataset.num_nodes());
  if (meta.value("data_hash", "") != d.hash) {
    progress << "note: dataset hash " << d.hash << " differs from the training data\n";
  }
  write_snapshot(join(cfg.output_dir, "forecast_config.json"), "forecast", cfg, d.hash);

  SpecStgModel model(tt.model_dims(), tt.seed);
  load_checkpoint(ckpt, model.params());
  const auto t0 = std::chrono::steady_clock::now();
  const WindowForecasts f = forecast_test(model, tt, cfg, d);
  progress << "forecast " << f.windows.size() << " windows x " << cfg.trainer.samples
           << " samples in "
           << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
           << " s\n";

  ForecastSummary s;
  s.windows = f.windows.size();
  s.nodes = d.dataset.num_nodes();
  s.horizon = tt.horizon;
  s.samples = cfg.trainer.samples;
  s.forecast_csv = join(cfg.output_dir, "forecast.csv");

  auto fc = open_out(s.forecast_csv);
  auto tr = open_out(join(cfg.output_dir, "truth.csv"));
  auto ps = open_out(join(cfg.output_dir, "persistence.csv"));
  for (auto* o : {&fc, &tr, &ps}) o->precision(12);
  fc << "window_id,node,t,mean,q05,q25,q50,q75,q95\n";
  tr << "window_id,node,t,value\n";
  ps << "window_id,node,t,value\n";
  const double levels[] = {0.05, 0.25, 0.5, 0.75, 0.95};
  std::vector<double> draws(cfg.trainer.samples);
  Json starts = Json::array();
  for (std::size_t w = 0; w < f.windows.size(); ++w) {
    const auto& win = f.windows[w];
    const auto& res = f.results[w];
    const Matrix truth = truth_of(d, win);
    const Matrix last = persistence_forecast(raw_context(d, win), tt.horizon);
    starts.push_back(win.start);
    for (Eigen::Index n = 0; n < truth.rows(); ++n) {
      for (Eigen::Index t = 0; t < truth.cols(); ++t) {
        const auto abs_t = win.start + tt.context + static_cast<std::size_t>(t);
        for (std::size_t i = 0; i < draws.size(); ++i) draws[i] = res.samples[i](n, t);
        std::sort(draws.begin(), draws.end());
        fc << w << ',' << n << ',' << abs_t << ',' << res.predictions(n, t);
        for (double q : levels) fc << ',' << empirical_quantile(draws, q);
        fc << '\n';
        tr << w << ',' << n << ',' << abs_t << ',' << truth(n, t) << '\n';
        ps << w << ',' << n << ',' << abs_t << ',' << last(n, t) << '\n';
      }
    }
  }
  if (cfg.dump_samples) write_samples(join(cfg.output_dir, "samples.bin"), f.results);

  Json fm;
  fm["windows"] = s.windows;
  fm["nodes"] = s.nodes;
  fm["horizon"] = s.horizon;
  fm["samples"] = s.samples;
  fm["seed"] = cfg.trainer.seed;
  fm["interval_minutes"] = d.dataset.interval_minutes;
  fm["persistence_width"] = persistence_width(d, tt.horizon);
  fm["window_starts"] = starts;
  write_json(join(cfg.output_dir, "forecast_meta.json"), fm);
  progress << "wrote " << s.forecast_csv << "\n";
  return s;
}

EvalSummary cmd_eval(const std::string& forecast_dir, const std::string& out_dir) {
  const Json fm = read_json(join(forecast_dir, "forecast_meta.json"));
  const auto windows = fm.at("windows").get<std::size_t>();
  const auto nodes = fm.at("nodes").get<std::size_t>();
  const auto horizon = fm.at("horizon").get<std::size_t>();
  const auto forecast = read_long_csv(join(forecast_dir, "forecast.csv"),
                                      "window_id,node,t,mean,q05,q25,q50,q75,q95", 3);
  const auto truth = read_long_csv(join(forecast_dir, "truth.csv"), "window_id,node,t,value", 3);
  const auto persist =
      read_long_csv(join(forecast_dir, "persistence.csv"), "window_id,node,t,value", 3);
  check_same_keys(forecast, truth, "forecast vs truth");
  check_same_keys(persist, truth, "persistence vs truth");
  const auto preds = fold(forecast, windows, nodes, horizon, "forecast.csv");
  const auto truths = fold(truth, windows, nodes, horizon, "truth.csv");
  const auto last = fold(persist, windows, nodes, horizon, "persistence.csv");
  const auto samples = read_samples(join(forecast_dir, "samples.bin"), windows, nodes, horizon);

  const double width = fm.at("persistence_width").get<double>();
  const auto count = fm.at("samples").get<std::size_t>();
  const auto seed = fm.at("seed").get<std::uint64_t>();
  std::vector<std::vector<Matrix>> gauss, persist_samples;
  for (std::size_t w = 0; w < windows; ++w) {
    gauss.push_back(gaussian_samples(last[w], width, count, seed * 7919 + w));
    persist_samples.push_back({last[w], last[w]});
  }

  EvalSummary s;
  s.interval_minutes = fm.at("interval_minutes").get<int>();
  s.model = evaluate(samples, preds, truths);
  s.persistence = evaluate(persist_samples, last, truths);
  s.gaussian = evaluate(gauss, last, truths);

  ensure_dir(out_dir);
  write_report_csv(join(out_dir, "report.csv"),
                   {{"specstg", s.model}, {"persistence", s.persistence}, {"gaussian", s.gaussian}},
                   s.interval_minutes);
  write_window_csv(join(out_dir, "windows.csv"), s.model);
  auto txt = open_out(join(out_dir, "report.txt"));
  txt << format_report(s.model, s.interval_minutes, "specstg")
      << format_report(s.persistence, s.interval_minutes, "persistence", false)
      << format_report(s.gaussian, s.interval_minutes, "gaussian", false);
  return s;
}

bool cmd_gradcheck(const GradCheckOptions& opts, std::ostream& report) {
  const auto results = check_all_layers(opts);
  report << format_gradcheck(results);
  return std::all_of(results.begin(), results.end(),
                     [](const GradCheckResult& r) { return r.passed; });
}

std::vector<BenchRow> cmd_bench_specconv(const BenchOptions& opts, const std::string& csv_path) {
  if (opts.sizes.empty() || !std::is_sorted(opts.sizes.begin(), opts.sizes.end())) {
    throw ConfigError("benchmark sizes must be given in ascending order");
  }
  if (opts.calls == 0 || opts.repeats == 0 || opts.order == 0 || opts.channels == 0) {
    throw ConfigError("benchmark counts must be positive");
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
    return m;
  };
  using Clock = std::chrono::steady_clock;
  // Best of `repeats` averages over `calls` invocations, in microseconds.
  auto time_us = [&](const std::function<void()>& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < opts.repeats; ++r) {
      const auto t0 = Clock::now();
      for (std::size_t i = 0; i < opts.calls; ++i) fn();
      const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
      best = std::min(best, us / static_cast<double>(opts.calls));
    }
    return best;
  };

  NoGradGuard no_grad;
  std::vector<BenchRow> rows;
  double sink = 0.0;
  for (std::size_t n : opts.sizes) {
    // A random orthonormal basis stands in for a Laplacian eigenbasis; the
    // timing depends only on the shapes.
    FourierBasis basis;
    basis.eigvecs = Matrix(Eigen::HouseholderQR<Matrix>(random(n, n)).householderQ());
    std::uniform_real_distribution<double> lam(0.0, 2.0);
    basis.eigvals = Vector(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < basis.eigvals.size(); ++i) basis.eigvals(i) = lam(rng);
    std::sort(basis.eigvals.begin(), basis.eigvals.end());
    basis.lambda_max = basis.eigvals.maxCoeff();
    basis.scaled_eigvals = (2.0 / basis.lambda_max) * basis.eigvals.array() - 1.0;

    std::vector<Matrix> coeffs;
    SpecConvFilter filter;
    for (std::size_t j = 0; j < opts.order; ++j) {
      coeffs.push_back(random(opts.channels, opts.channels));
      filter.coeffs.emplace_back(coeffs.back());
    }
    const Matrix x = random(n, opts.channels);
    const Tensor xt(basis.eigvecs.transpose() * x);
    const Matrix cheb = chebyshev_diag(basis.scaled_eigvals, opts.order);

    BenchRow row;
    row.nodes = n;
    row.spec_conv_us = time_us([&] { sink += spec_conv(filter, cheb, xt).value()(0, 0); });
    row.dense_us = time_us([&] { sink += cheb_conv_dense(coeffs, basis, x)(0, 0); });
    if (!rows.empty()) {
      row.spec_ratio = row.spec_conv_us / rows.back().spec_conv_us;
      row.dense_ratio = row.dense_us / rows.back().dense_us;
    }
    rows.push_back(row);
  }
  if (!std::isfinite(sink)) throw NumericError("benchmark produced non-finite output");

  if (!csv_path.empty()) {
    auto out = open_out(csv_path);
    out << "nodes,spec_conv_us,dense_us,spec_ratio,dense_ratio\n";
    for (const auto& r : rows) {
      out << r.nodes << ',' << r.spec_conv_us << ',' << r.dense_us << ',' << r.spec_ratio << ','
          << r.dense_ratio << '\n';
    }
  }
  return rows;
}

SweepSummary cmd_sweep(const RunConfig& cfg, std::ostream& progress) {
  if (cfg.sweep.beta_k.empty() || cfg.sweep.num_steps.empty()) {
    throw ConfigError("sweep grid is empty");
  }
  ensure_dir(cfg.output_dir);
  const LoadedData d = load_data(cfg);
  write_snapshot(join(cfg.output_dir, "sweep_config.json"), "sweep", cfg, d.hash);
  SweepSummary s;
  std::ostringstream quiet;
  for (double beta_k : cfg.sweep.beta_k) {
    for (std::size_t k : cfg.sweep.num_steps) {
      RunConfig cell = cfg;
      cell.trainer.beta_k = beta_k;
      cell.trainer.num_steps = k;
      cell.trainer.validate();
      const auto t0 = std::chrono::steady_clock::now();
      TrainedModel tm = train_model(cell.trainer, d, quiet);
      const WindowForecasts f = forecast_test(tm.model, cell.trainer, cell, d);
      const EvalReport r = evaluate_forecasts(d, f);
      s.cells.push_back({beta_k, k, tm.result.best_val_loss, r.rmse_avg, r.mae_avg, r.crps_avg});
      progress << "beta_K=" << beta_k << " K=" << k << "  rmse " << r.rmse_avg << "  mae "
               << r.mae_avg << "  crps " << r.crps_avg << "  ("
               << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
               << " s)\n";
    }
  }

  auto out = open_out(join(cfg.output_dir, "sweep.csv"));
  out.precision(10);
  out << "beta_k,num_steps,best_val_loss,rmse,mae,crps\n";
  for (const auto& c : s.cells) {
    out << c.beta_k << ',' << c.num_steps << ',' << c.best_val_loss << ',' << c.rmse << ','
        << c.mae << ',' << c.crps << '\n';
  }
  const std::pair<const char*, double SweepCell::*> metrics[] = {
      {"rmse", &SweepCell::rmse}, {"mae", &SweepCell::mae}, {"crps", &SweepCell::crps}};
  for (const auto& [name, field] : metrics) {
    auto grid = open_out(join(cfg.output_dir, std::string("sweep_") + name + ".csv"));
    grid.precision(10);
    grid << "beta_k";
    for (std::size_t k : cfg.sweep.num_steps) grid << ",K=" << k;
    grid << '\n';
    std::size_t i = 0;
    for (double beta_k : cfg.sweep.beta_k) {
      grid << beta_k;
      for (std::size_t j = 0; j < cfg.sweep.num_steps.size(); ++j, ++i) {
        grid << ',' << s.cells[i].*field;
      }
      grid << '\n';
    }
    SweepSpread sp;
    sp.metric = name;
    sp.min = std::numeric_limits<double>::infinity();
    sp.max = -sp.min;
    for (const auto& c : s.cells) {
      sp.min = std::min(sp.min, c.*field);
      sp.max = std::max(sp.max, c.*field);
      sp.mean += c.*field / static_cast<double>(s.cells.size());
    }
    sp.relative = sp.mean != 0.0 ? (sp.max - sp.min) / sp.mean : 0.0;
    s.spread.push_back(sp);
  }
  auto spread = open_out(join(cfg.output_dir, "sweep_spread.csv"));
  spread.precision(10);
  spread << "metric,min,max,mean,relative_spread\n";
  for (const auto& sp : s.spread) {
    spread << sp.metric << ',' << sp.min << ',' << sp.max << ',' << sp.mean << ',' << sp.relative
           << '\n';
    progress << sp.metric << " relative spread across cells: " << sp.relative << "\n";
  }
  return s;
}

void cmd_synth(const RunConfig& cfg, std::ostream& progress) {
  ensure_dir(cfg.output_dir);
  const auto ds = synth_dataset(cfg.data.synth_nodes, cfg.data.synth_steps, cfg.data.synth_seed);
  const std::string values = join(cfg.output_dir, "values.csv");
  const std::string graph = join(cfg.output_dir, "graph.csv");
  write_values_csv(values, ds.values);
  auto out = open_out(graph);
  out << "from,to,cost\n";
  const Matrix& a = ds.graph.adjacency();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      if (a(i, j) != 0.0) out << i << ',' << j << ',' << 1.0 / a(i, j) << '\n';
    }
  }
  progress << "wrote " << values << " (" << ds.num_nodes() << " x " << ds.num_steps() << ") and "
           << graph << " (" << ds.graph.num_edges() << " edges); start " << ds.start.str()
           << ", " << ds.interval_minutes << "-minute steps\n";
}

}  // namespace specstg
