#include "specstg/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace specstg {

namespace {

using Json = nlohmann::ordered_json;

const char* sigma_name(SigmaRule r) { return r == SigmaRule::kPosterior ? "posterior" : "sqrt_beta"; }

Json to_json(const RunConfig& c) {
  const auto& t = c.trainer;
  Json j;
  j["num_steps"] = t.num_steps;
  j["beta_1"] = t.beta_1;
  j["beta_k"] = t.beta_k;
  j["sigma_rule"] = sigma_name(t.sigma_rule);
  j["lr_start"] = t.lr_start;
  j["lr_end"] = t.lr_end;
  j["warmup_fraction"] = t.warmup_fraction;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["hidden"] = t.hidden;
  j["residual_blocks"] = t.residual_blocks;
  j["residual_channels"] = t.residual_channels;
  j["gru_order"] = t.gru_order;
  j["cond_order"] = t.cond_order;
  j["context"] = t.context;
  j["horizon"] = t.horizon;
  j["samples"] = t.samples;
  j["loss_from_context"] = t.loss_from_context;
  j["train_stride"] = t.train_stride;
  j["val_stride"] = t.val_stride;
  j["eval_stride"] = t.eval_stride;
  j["time_features"] = {{"day_of_week", t.time_features.day_of_week},
                        {"week_of_month", t.time_features.week_of_month},
                        {"time_of_day", t.time_features.time_of_day},
                        {"transform", t.time_features.transform}};
  j["seed"] = t.seed;
  j["threads"] = t.threads;
  const auto& d = c.data;
  j["data"] = {{"values", d.values},
               {"graph", d.graph},
               {"interval_minutes", static_cast<unsigned>(std::max(d.interval_minutes, 0))},
               {"start", d.start},
               {"weighting", d.weighting},
               {"symmetrize", d.symmetrize},
               {"ratios", {{"train", d.ratios.train}, {"val", d.ratios.val}, {"test", d.ratios.test}}},
               {"synth_nodes", d.synth_nodes},
               {"synth_steps", d.synth_steps},
               {"synth_seed", d.synth_seed}};
  j["sweep"] = {{"beta_k", c.sweep.beta_k}, {"num_steps", c.sweep.num_steps}};
  j["output_dir"] = c.output_dir;
  j["checkpoint"] = c.checkpoint;
  j["dump_samples"] = c.dump_samples;
  j["max_windows"] = c.max_windows;
  return j;
}

// Overlays `user` onto `base`, rejecting keys that `base` lacks.
void merge_checked(Json& base, const Json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else {
      slot = value;
    }
  }
}

std::size_t get_count(const Json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_real(const Json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(key + " must be a number");
  return v.get<double>();
}

bool get_flag(const Json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(key + " must be true or false");
  return v.get<bool>();
}

std::string get_text(const Json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(key + " must be a string");
  return v.get<std::string>();
}

RunConfig from_json(const Json& j) {
  RunConfig c;
  auto& t = c.trainer;
  t.num_steps = get_count(j, "num_steps");
  t.beta_1 = get_real(j, "beta_1");
  t.beta_k = get_real(j, "beta_k");
  const auto rule = get_text(j, "sigma_rule");
  if (rule == "sqrt_beta") {
    t.sigma_rule = SigmaRule::kSqrtBeta;
  } else if (rule == "posterior") {
    t.sigma_rule = SigmaRule::kPosterior;
  } else {
    throw ConfigError("sigma_rule must be 'sqrt_beta' or 'posterior', got '" + rule + "'");
  }
  t.lr_start = get_real(j, "lr_start");
  t.lr_end = get_real(j, "lr_end");
  t.warmup_fraction = get_real(j, "warmup_fraction");
  t.epochs = get_count(j, "epochs");
  t.batch_size = get_count(j, "batch_size");
  t.hidden = get_count(j, "hidden");
  t.residual_blocks = get_count(j, "residual_blocks");
  t.residual_channels = get_count(j, "residual_channels");
  t.gru_order = get_count(j, "gru_order");
  t.cond_order = get_count(j, "cond_order");
  t.context = get_count(j, "context");
  t.horizon = get_count(j, "horizon");
  t.samples = get_count(j, "samples");
  t.loss_from_context = get_flag(j, "loss_from_context");
  t.train_stride = get_count(j, "train_stride");
  t.val_stride = get_count(j, "val_stride");
  t.eval_stride = get_count(j, "eval_stride");
  const auto& tf = j.at("time_features");
  t.time_features.day_of_week = get_flag(tf, "day_of_week");
  t.time_features.week_of_month = get_flag(tf, "week_of_month");
  t.time_features.time_of_day = get_flag(tf, "time_of_day");
  t.time_features.transform = get_flag(tf, "transform");
  t.seed = get_count(j, "seed");
  t.threads = get_count(j, "threads");

  const auto& d = j.at("data");
  c.data.values = get_text(d, "values");
  c.data.graph = get_text(d, "graph");
  c.data.interval_minutes = static_cast<int>(get_count(d, "interval_minutes"));
  c.data.start = get_text(d, "start");
  c.data.weighting = get_text(d, "weighting");
  c.data.symmetrize = get_flag(d, "symmetrize");
  const auto& r = d.at("ratios");
  c.data.ratios = {get_real(r, "train"), get_real(r, "val"), get_real(r, "test")};
  c.data.synth_nodes = get_count(d, "synth_nodes");
  c.data.synth_steps = get_count(d, "synth_steps");
  c.data.synth_seed = get_count(d, "synth_seed");

  const auto& s = j.at("sweep");
  c.sweep.beta_k.clear();
  c.sweep.num_steps.clear();
  if (!s.at("beta_k").is_array() || !s.at("num_steps").is_array()) {
    throw ConfigError("sweep.beta_k and sweep.num_steps must be arrays");
  }
  for (const auto& v : s.at("beta_k")) {
    if (!v.is_number()) throw ConfigError("sweep.beta_k entries must be numbers");
    c.sweep.beta_k.push_back(v.get<double>());
  }
  for (const auto& v : s.at("num_steps")) {
    if (!v.is_number_unsigned()) throw ConfigError("sweep.num_steps entries must be integers");
    c.sweep.num_steps.push_back(v.get<std::size_t>());
  }

  c.output_dir = get_text(j, "output_dir");
  c.checkpoint = get_text(j, "checkpoint");
  c.dump_samples = get_flag(j, "dump_samples");
  c.max_windows = get_count(j, "max_windows");
  return c;
}

}  // namespace

void validate_config(const RunConfig& c) {
  c.trainer.validate();
  const auto& r = c.data.ratios;
  if (r.train <= 0.0 || r.val <= 0.0 || r.test <= 0.0 ||
      std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  if (c.data.weighting != "binary" && c.data.weighting != "inverse_distance" &&
      c.data.weighting != "raw") {
    throw ConfigError("data.weighting must be binary, inverse_distance or raw");
  }
  if (c.data.interval_minutes <= 0) throw ConfigError("data.interval_minutes must be positive");
  if (c.data.values.empty() != c.data.graph.empty()) {
    throw ConfigError("data.values and data.graph must be given together");
  }
  if (c.data.values.empty() && (c.data.synth_nodes < 2 || c.data.synth_steps < 200)) {
    throw ConfigError("synthetic data needs synth_nodes >= 2 and synth_steps >= 200");
  }
  if (c.trainer.samples < 2) throw ConfigError("samples must be at least 2 for quantiles and CRPS");
}

namespace {

RunConfig parse_json(const Json& user) {
  RunConfig defaults;
  defaults.output_dir = default_output_dir();
  Json base = to_json(defaults);
  merge_checked(base, user, "");
  RunConfig c = from_json(base);
  validate_config(c);
  return c;
}

}  // namespace

std::string default_output_dir() {
  if (const char* env = std::getenv("SPECSTG_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return "specstg_out";
}

RunConfig parse_config(const std::string& json_text) {
  Json user;
  try {
    user = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  // Snapshots written by the commands wrap the config with provenance.
  if (user.is_object() && user.contains("resolved_config")) return parse_json(user["resolved_config"]);
  return parse_json(user);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  // Build {"a": {"b": value}} from "a.b" and merge it like a config file.
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos;) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  Json base = to_json(cfg);
  merge_checked(base, patch, "");
  RunConfig out = from_json(base);
  validate_config(out);
  cfg = out;
}

std::string config_to_json(const RunConfig& cfg, int indent) { return to_json(cfg).dump(indent); }

}  // namespace specstg
