#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "specstg/commands.hpp"
#include "test_helpers.hpp"

using namespace specstg;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<double> cells(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) out.push_back(std::stod(c));
  return out;
}

RunConfig tiny_config(const fs::path& out) {
  RunConfig cfg = parse_config(R"({
    "num_steps": 5, "beta_k": 0.3, "epochs": 2, "batch_size": 8,
    "hidden": 4, "residual_blocks": 1, "residual_channels": 4,
    "context": 3, "horizon": 3, "samples": 3, "train_stride": 10, "val_stride": 10,
    "eval_stride": 5, "max_windows": 2,
    "data": {"synth_nodes": 4, "synth_steps": 400}
  })");
  cfg.output_dir = out.string();
  return cfg;
}

// Runs the CLI and returns its exit status.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPECSTG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults and round trip") {
  const RunConfig cfg = parse_config("{}");
  CHECK(cfg.trainer.num_steps == 50);
  CHECK(cfg.trainer.beta_k == 0.3);
  CHECK(cfg.trainer.hidden == 64);
  CHECK(cfg.data.weighting == "binary");
  CHECK(cfg.sweep.beta_k.size() == 4);
  CHECK(cfg.sweep.num_steps.size() == 3);
  const RunConfig again = parse_config(config_to_json(cfg));
  CHECK(config_to_json(again) == config_to_json(cfg));
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_config(R"({"epoch": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"data": {"nodes": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"epochs": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"epochs": "many"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sigma_rule": "other"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"data": {"ratios": {"train": 0.7}}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"data": {"values": "v.csv"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"samples": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("overrides") {
  RunConfig cfg = parse_config("{}");
  apply_override(cfg, "epochs=7");
  apply_override(cfg, "data.synth_nodes=9");
  apply_override(cfg, "data.weighting=inverse_distance");
  apply_override(cfg, "sweep.beta_k=[0.2,0.3]");
  CHECK(cfg.trainer.epochs == 7);
  CHECK(cfg.data.synth_nodes == 9);
  CHECK(cfg.data.weighting == "inverse_distance");
  CHECK(cfg.sweep.beta_k == std::vector<double>{0.2, 0.3});
  CHECK_THROWS_AS(apply_override(cfg, "nokey"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "bogus=1"), ConfigError);
  CHECK(cfg.trainer.epochs == 7);
}

TEST_CASE("snapshots load as configs") {
  const auto dir = testing_util::scratch_dir("snapshot");
  RunConfig cfg = parse_config(R"({"epochs": 4})");
  write_snapshot((dir / "s.json").string(), "train", cfg, "abc");
  const RunConfig back = load_config((dir / "s.json").string());
  CHECK(back.trainer.epochs == 4);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(FormatError("x")) == 3);
  CHECK(exit_code_for(InputError("x")) == 3);
  CHECK(exit_code_for(NumericError("x")) == 4);
  CHECK(exit_code_for(NodeMismatchError(3, 4)) == 5);
  CHECK(exit_code_for(AlignmentError("x")) == 6);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("train, forecast and eval on a tiny synthetic run") {
  const auto dir = testing_util::scratch_dir("pipeline");
  const RunConfig cfg = tiny_config(dir);
  std::ostringstream progress;
  const auto train = cmd_train(cfg, progress);
  CHECK(train.result.log.size() == 2);
  for (const char* f : {"checkpoint.json", "train_log.csv", "train_summary.json",
                        "train_config.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto log = lines_of(dir / "train_log.csv");
  CHECK(log.front() == "epoch,train_loss,val_loss,seconds");
  CHECK(log.size() == 3);

  const auto fc = cmd_forecast(cfg, progress);
  CHECK(fc.windows == 2);
  CHECK(fc.nodes == 4);
  CHECK(fc.horizon == 3);
  const auto rows = lines_of(dir / "forecast.csv");
  CHECK(rows.front() == "window_id,node,t,mean,q05,q25,q50,q75,q95");
  CHECK(rows.size() == 1 + 2 * 4 * 3);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto v = cells(rows[i]);
    REQUIRE(v.size() == 9);
    for (std::size_t q = 5; q < 9; ++q) CHECK(v[q - 1] <= v[q]);
  }
  CHECK(lines_of(dir / "truth.csv").size() == rows.size());
  CHECK(fs::exists(dir / "samples.bin"));

  const auto ev = cmd_eval(dir.string(), dir.string());
  CHECK(ev.model.windows.size() == 2);
  CHECK(ev.model.rmse_avg >= ev.model.mae_avg);
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "report.txt"));

  // Same seed, same files.
  const auto dir2 = testing_util::scratch_dir("pipeline_again");
  const RunConfig cfg2 = tiny_config(dir2);
  cmd_train(cfg2, progress);
  cmd_forecast(cfg2, progress);
  CHECK(read_file(dir / "checkpoint.json") == read_file(dir2 / "checkpoint.json"));
  CHECK(read_file(dir / "forecast.csv") == read_file(dir2 / "forecast.csv"));
  CHECK(read_file(dir / "samples.bin") == read_file(dir2 / "samples.bin"));
}

TEST_CASE("forecast rejects a checkpoint for a different node count") {
  const auto dir = testing_util::scratch_dir("mismatch");
  RunConfig cfg = tiny_config(dir);
  cfg.trainer.epochs = 0;
  std::ostringstream progress;
  cmd_train(cfg, progress);
  RunConfig other = cfg;
  other.data.synth_nodes = 5;
  try {
    cmd_forecast(other, progress);
    FAIL("expected a node mismatch");
  } catch (const NodeMismatchError& e) {
    CHECK(e.checkpoint == 4);
    CHECK(e.data == 5);
  }
}

TEST_CASE("cli exit codes") {
  const auto dir = testing_util::scratch_dir("cli_codes");
  const std::string out = (dir / "run").string();
  {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"epochz": 3})";
    std::ofstream good(dir / "good.json");
    good << R"({"num_steps": 5, "epochs": 1, "batch_size": 8, "hidden": 4,
               "residual_blocks": 1, "residual_channels": 4, "context": 3, "horizon": 3,
               "samples": 3, "train_stride": 10, "val_stride": 10, "eval_stride": 5,
               "max_windows": 2, "data": {"synth_nodes": 4, "synth_steps": 400}})";
  }
  CHECK(run_cli("train -c " + (dir / "bad.json").string() + " -o " + out) == 2);
  CHECK(run_cli("train --set nothing=1 -o " + out) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train -c " + (dir / "good.json").string() + " -o " + out) == 0);
  CHECK(run_cli("forecast -c " + (dir / "good.json").string() + " -o " + out) == 0);
  CHECK(run_cli("eval --forecast-dir " + out) == 0);
  CHECK(run_cli("forecast -c " + (dir / "good.json").string() + " -o " + out +
                " --set data.synth_nodes=5 --checkpoint " + out + "/checkpoint.json") == 5);
  // The mismatched run above failed before writing, so the files still agree.
  CHECK(run_cli("eval --forecast-dir " + out) == 0);

  auto truth = lines_of(fs::path(out) / "truth.csv");
  truth.pop_back();
  {
    std::ofstream t(fs::path(out) / "truth.csv");
    for (const auto& l : truth) t << l << "\n";
  }
  CHECK(run_cli("eval --forecast-dir " + out) == 6);
  CHECK(run_cli("train --values " + (dir / "missing.csv").string() + " --graph " +
                (dir / "missing_graph.csv").string() + " -o " + out) == 3);
}

TEST_CASE("gradcheck and bench commands") {
  std::ostringstream report;
  GradCheckOptions opts;
  CHECK(cmd_gradcheck(opts, report));
  CHECK(report.str().find("full_denoiser") != std::string::npos);

  const auto dir = testing_util::scratch_dir("bench");
  BenchOptions b;
  b.sizes = {40, 80};
  b.calls = 3;
  b.repeats = 1;
  const auto rows = cmd_bench_specconv(b, (dir / "b.csv").string());
  CHECK(rows.size() == 2);
  const auto lines = lines_of(dir / "b.csv");
  CHECK(lines.front() == "nodes,spec_conv_us,dense_us,spec_ratio,dense_ratio");
  CHECK(lines.size() == 3);
}

TEST_CASE("synth writes loadable files") {
  const auto dir = testing_util::scratch_dir("synth");
  RunConfig cfg = parse_config(R"({"data": {"synth_nodes": 6, "synth_steps": 300}})");
  cfg.output_dir = dir.string();
  std::ostringstream progress;
  cmd_synth(cfg, progress);
  RunConfig from_files = cfg;
  from_files.data.values = (dir / "values.csv").string();
  from_files.data.graph = (dir / "graph.csv").string();
  const auto a = load_data(cfg);
  const auto b = load_data(from_files);
  CHECK((a.dataset.values - b.dataset.values).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(a.dataset.graph.adjacency() == b.dataset.graph.adjacency());
}

}  // TEST_SUITE
