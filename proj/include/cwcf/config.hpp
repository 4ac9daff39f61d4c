#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwcf/common.hpp"
#include "cwcf/data.hpp"
#include "cwcf/env.hpp"
#include "cwcf/trainer.hpp"

namespace cwcf {

using nlohmann::json;

// Run configuration. Resolution order: global defaults, dataset preset,
// scale preset, config file, command-line overrides; derived values
// (null = derive) are computed last and frozen into the snapshot.
inline json default_config() {
  return {
      {"dataset_preset", nullptr},
      {"scale", "paper"},
      {"data", {{"path", nullptr}, {"costs", nullptr}, {"split", {0.6, 0.2, 0.2}}}},
      {"synthetic", nullptr},
      {"missing", {{"rate", 0.0}, {"seed", 0}, {"variant", "mdp"}}},
      {"budget", {{"mode", "lambda"}, {"value", 0.01}}},
      {"seed", nullptr},
      {"ep_len", 1000},
      {"hidden", 128},
      {"n_envs", 1000},
      {"max_steps_factor", 100},
      {"max_steps", nullptr},
      {"gamma", 1.0},
      {"retrace_lambda", 1.0},
      {"rho", 0.1},
      {"batch_size", 50000},
      {"memory_episodes", 40000},
      {"eps_start", 1.0},
      {"eps_end", 0.1},
      {"eta_start", 0.5},
      {"eta_end", 0.0},
      {"eps_steps", nullptr},
      {"lr_pretrain", 1e-3},
      {"lr_start", 5e-4},
      {"lr_min", 5e-7},
      {"lr_scale", 0.5},
      {"lr_period", nullptr},
      {"pretrain_steps", nullptr},
      {"pretrain_batch", 128},
      {"lambda_lr", 5e-4},
      {"lambda_momentum", 0.5},
      {"lambda_lr_decay", 1.0},
      {"lambda_greedy_cost", false},
      {"lambda_relabel", true},
      {"lambda_window", 1000},
      {"oscillation_window", 50},
      {"oscillation_min_changes", 10},
      {"stop_on_oscillation", false},
      {"eval_every", nullptr},
      {"head_init_scale", 0.01},
      {"max_grad_norm", 1.0},
      {"warmup_fraction", 0.01},
      {"out_dir", "runs/run"},
  };
}

inline json dataset_preset(const std::string& name) {
  if (name == "miniboone") return {{"hidden", 128}, {"ep_len", 1000}};
  if (name == "diabetes") return {{"hidden", 128}, {"ep_len", 100}};
  if (name == "forest") return {{"hidden", 256}, {"ep_len", 10000}};
  throw ConfigError("dataset_preset: unknown preset '" + name + "' (miniboone|diabetes|forest)");
}

inline json scale_preset(const std::string& name) {
  if (name == "paper") return json::object();
  if (name == "desk") return {{"n_envs", 32}, {"batch_size", 128}, {"max_steps_factor", 10}};
  throw ConfigError("scale: unknown preset '" + name + "' (paper|desk)");
}

namespace detail {

inline void merge_known(json& base, const json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(key + ": unknown key");
    auto& slot = base[it.key()];
    if (slot.is_object() && it->is_object()) merge_known(slot, *it, key);
    else slot = *it;
  }
}

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;  // bare string
  }
}

}  // namespace detail

// "a.b=value" sets a nested key; the value is parsed as JSON when possible.
inline json apply_override(json cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const auto key = assignment.substr(0, eq);
  json patch = detail::parse_scalar(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
    parts.push_back(key.substr(start, dot - start));
  parts.push_back(key.substr(start));
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  detail::merge_known(cfg, patch);
  return cfg;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline json resolve_config(const json& file_cfg, const std::vector<std::string>& overrides = {}) {
  json cfg = default_config();
  // Presets sit below the file and the overrides, so peek at their names first.
  json probe = default_config();
  detail::merge_known(probe, file_cfg);
  for (const auto& o : overrides) probe = apply_override(probe, o);
  if (!probe["dataset_preset"].is_null())
    detail::merge_known(cfg, dataset_preset(probe["dataset_preset"].get<std::string>()));
  detail::merge_known(cfg, scale_preset(probe["scale"].get<std::string>()));
  cfg["dataset_preset"] = probe["dataset_preset"];
  cfg["scale"] = probe["scale"];
  detail::merge_known(cfg, file_cfg);
  for (const auto& o : overrides) cfg = apply_override(cfg, o);

  if (cfg["seed"].is_null()) throw ConfigError("seed: required (runs must be reproducible)");
  if (!cfg["seed"].is_number_integer()) throw ConfigError("seed: must be an integer");
  const bool has_path = !cfg["data"]["path"].is_null();
  const bool has_synth = !cfg["synthetic"].is_null();
  if (has_path == has_synth) throw ConfigError("data: exactly one of data.path or synthetic must be set");
  try {
    make_budget(cfg["budget"]["mode"].get<std::string>(), cfg["budget"]["value"].get<double>());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("budget: ") + e.what());
  } catch (const json::exception&) {
    throw ConfigError("budget: expected {mode: lambda|average|hard, value: number}");
  }
  const auto variant = cfg["missing"]["variant"].get<std::string>();
  if (variant != "mdp" && variant != "mean") throw ConfigError("missing.variant: expected mdp or mean");

  const auto ep_len = cfg["ep_len"].get<std::int64_t>();
  if (ep_len <= 0) throw ConfigError("ep_len: must be positive");
  auto derive = [&](const char* key, std::int64_t value) {
    if (cfg[key].is_null()) cfg[key] = value;
  };
  derive("max_steps", cfg["max_steps_factor"].get<std::int64_t>() * ep_len);
  derive("eps_steps", 2 * ep_len);
  derive("lr_period", ep_len);
  derive("pretrain_steps", std::max<std::int64_t>(1, ep_len / 2));
  derive("eval_every", std::max<std::int64_t>(1, ep_len / 4));
  for (const char* key : {"hidden", "n_envs", "batch_size", "memory_episodes", "lr_period", "eval_every"})
    if (cfg[key].get<std::int64_t>() <= 0) throw ConfigError(std::string(key) + ": must be positive");
  return cfg;
}

inline BudgetSpec budget_from_config(const json& cfg) {
  return make_budget(cfg["budget"]["mode"].get<std::string>(), cfg["budget"]["value"].get<double>());
}

inline TrainOptions train_options_from_config(const json& cfg) {
  TrainOptions o;
  o.hidden = cfg["hidden"].get<int>();
  o.n_envs = cfg["n_envs"].get<std::size_t>();
  o.max_steps = cfg["max_steps"].get<std::uint64_t>();
  o.gamma = cfg["gamma"].get<double>();
  o.retrace_lambda = cfg["retrace_lambda"].get<double>();
  o.rho = cfg["rho"].get<double>();
  o.batch_size = cfg["batch_size"].get<std::size_t>();
  o.memory_episodes = cfg["memory_episodes"].get<std::size_t>();
  o.schedules = {cfg["eps_start"].get<double>(), cfg["eps_end"].get<double>(), cfg["eta_start"].get<double>(),
                 cfg["eta_end"].get<double>(), cfg["eps_steps"].get<std::uint64_t>()};
  o.lr = {cfg["lr_start"].get<double>(), cfg["lr_min"].get<double>(), cfg["lr_scale"].get<double>(),
          cfg["lr_period"].get<std::uint64_t>()};
  o.pretrain = {cfg["pretrain_steps"].get<std::uint64_t>(), cfg["pretrain_batch"].get<std::size_t>(),
                cfg["lr_pretrain"].get<double>(), cfg["max_grad_norm"].get<double>()};
  o.max_grad_norm = cfg["max_grad_norm"].get<double>();
  o.head_init_scale = cfg["head_init_scale"].get<double>();
  o.warmup_fraction = cfg["warmup_fraction"].get<double>();
  o.lambda_lr = cfg["lambda_lr"].get<double>();
  o.lambda_momentum = cfg["lambda_momentum"].get<double>();
  o.lambda_lr_decay = cfg["lambda_lr_decay"].get<double>();
  o.lambda_greedy_cost = cfg["lambda_greedy_cost"].get<bool>();
  o.lambda_relabel = cfg["lambda_relabel"].get<bool>();
  o.lambda_window = cfg["lambda_window"].get<std::size_t>();
  o.oscillation_window = cfg["oscillation_window"].get<std::size_t>();
  o.oscillation_min_changes = cfg["oscillation_min_changes"].get<std::size_t>();
  o.stop_on_oscillation = cfg["stop_on_oscillation"].get<bool>();
  o.eval_every = cfg["eval_every"].get<std::uint64_t>();
  o.seed = cfg["seed"].get<std::uint64_t>();
  return o;
}

inline SyntheticSpec synthetic_from_json(const json& j) {
  SyntheticSpec s;
  static const std::set<std::string> known{"generator", "n_features", "n_samples", "rule",
                                           "signal",    "decay",      "costs",     "split"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("synthetic." + it.key() + ": unknown key");
  s.generator = j.value("generator", s.generator);
  s.n_features = j.value("n_features", s.n_features);
  s.n_samples = j.value("n_samples", s.n_samples);
  s.rule = j.value("rule", s.rule);
  s.signal = j.value("signal", s.signal);
  s.decay = j.value("decay", s.decay);
  if (j.contains("costs")) s.costs = j["costs"].get<std::vector<double>>();
  if (j.contains("split")) {
    const auto f = j["split"].get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("synthetic.split: expected [train, val, test]");
    s.fractions = {f[0], f[1], f[2]};
  }
  return s;
}

// Loads (or generates) the dataset and applies the missing-data setting.
inline Dataset dataset_from_config(const json& cfg) {
  const auto seed = cfg["seed"].get<std::uint64_t>();
  Dataset d;
  if (!cfg["synthetic"].is_null()) {
    d = make_synthetic(synthetic_from_json(cfg["synthetic"]), seed);
  } else {
    const auto f = cfg["data"]["split"].get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("data.split: expected [train, val, test]");
    std::optional<std::string> costs;
    if (!cfg["data"]["costs"].is_null()) costs = cfg["data"]["costs"].get<std::string>();
    d = load_dataset(cfg["data"]["path"].get<std::string>(), costs, {f[0], f[1], f[2]}, seed);
  }
  const double rate = cfg["missing"]["rate"].get<double>();
  if (rate > 0.0) {
    d = mcar_drop(d, rate, cfg["missing"]["seed"].get<std::uint64_t>());
    if (cfg["missing"]["variant"].get<std::string>() == "mean") d = impute_mean(d);
  }
  return d;
}

}  // namespace cwcf
