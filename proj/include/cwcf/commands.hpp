#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwcf/config.hpp"
#include "cwcf/data.hpp"
#include "cwcf/evalx.hpp"
#include "cwcf/net.hpp"
#include "cwcf/oracle.hpp"
#include "cwcf/trainer.hpp"

namespace cwcf {

namespace fs = std::filesystem;

// Run directory layout:
//   config.json          resolved configuration
//   data.bin             dataset snapshot (normalized, with statistics)
//   metrics.csv          step,lambda,train_cost,val_cost,val_accuracy,loss,epsilon,eta,lr
//   checkpoints/step_<n>.ckpt, best.ckpt, final.ckpt
//   report.json          best/final validation and test points

inline constexpr int kRunReportVersion = 1;
inline constexpr const char* kMetricsHeader = "step,lambda,train_cost,val_cost,val_accuracy,loss,epsilon,eta,lr";

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

inline std::string metrics_line(const MetricsRow& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.step << ',' << r.lambda << ',' << r.train_cost << ',' << r.val_cost << ','
     << r.val_accuracy << ',' << r.loss << ',' << r.epsilon << ',' << r.eta << ',' << r.lr;
  return os.str();
}

inline json eval_json(const EvalResult& e) {
  return {{"mean_cost", e.mean_cost},
          {"accuracy", e.accuracy},
          {"max_sample_cost", e.max_cost},
          {"mean_reward", e.mean_reward},
          {"samples", e.samples}};
}

inline Checkpoint make_checkpoint(const QNetwork& net, const Trainer& t) {
  Checkpoint ck = t.checkpoint();
  ck.online = net;
  return ck;
}

// Trains one configuration into cfg.out_dir. Returns the run directory.
inline fs::path cmd_train(const json& cfg) {
  const fs::path dir = cfg["out_dir"].get<std::string>();
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw Error("cannot create run directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.json", cfg.dump(2) + "\n");

  const Dataset data = dataset_from_config(cfg);
  save_dataset(data, (dir / "data.bin").string());
  const auto budget = budget_from_config(cfg);
  const auto opt = train_options_from_config(cfg);

  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw Error("cannot write metrics.csv");
  metrics << kMetricsHeader << '\n';
  Trainer trainer(data, budget, opt);
  auto result = trainer.run([&](const MetricsRow& row) {
    metrics << metrics_line(row) << '\n';
    metrics.flush();
    save_checkpoint(trainer.checkpoint(), (dir / "checkpoints" / ("step_" + std::to_string(row.step) + ".ckpt")).string());
  });

  save_checkpoint(make_checkpoint(result.final_net, trainer), (dir / "checkpoints" / "final.ckpt").string());
  save_checkpoint(make_checkpoint(result.best_net, trainer), (dir / "checkpoints" / "best.ckpt").string());

  const double lambda = std::holds_alternative<LambdaFixed>(budget) ? budget_parameter(budget) : 0.0;
  json report{{"schema_version", kRunReportVersion},
              {"budget", {{"mode", budget_mode_name(budget)}, {"value", budget_parameter(budget)}}},
              {"steps", result.steps_done},
              {"final_lambda", result.final_lambda},
              {"best_step", result.snapshots.empty() ? 0 : result.snapshots[result.best_index].step},
              {"best_feasible", result.best_feasible},
              {"stopped_on_oscillation", result.stopped_on_oscillation},
              {"prior_accuracy", prior_accuracy(data, SplitId::Test)},
              {"max_cost", data.total_cost()},
              {"best",
               {{"val", eval_json(evaluate(result.best_net, data, SplitId::Val, budget, lambda))},
                {"test", eval_json(evaluate(result.best_net, data, SplitId::Test, budget, lambda))}}},
              {"final",
               {{"val", eval_json(evaluate(result.final_net, data, SplitId::Val, budget, lambda))},
                {"test", eval_json(evaluate(result.final_net, data, SplitId::Test, budget, lambda))}}}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  return dir;
}

// Evaluates a checkpoint of a run directory on a split. Uses only files
// inside the run directory.
inline json cmd_eval(const fs::path& run_dir, const std::string& checkpoint, SplitId split) {
  const json cfg = load_json_file((run_dir / "config.json").string());
  const Dataset data = load_snapshot((run_dir / "data.bin").string());
  const auto budget = budget_from_config(cfg);
  fs::path ck_path = checkpoint;
  if (checkpoint == "best" || checkpoint == "final") ck_path = run_dir / "checkpoints" / (checkpoint + ".ckpt");
  const auto ck = load_checkpoint(ck_path.string());
  if (ck.online.shape != NetShape{2 * data.n_features(), ck.online.shape.hidden, data.n_actions()})
    throw ShapeError("checkpoint does not match the dataset of this run");
  const double lambda = std::holds_alternative<LambdaFixed>(budget) ? budget_parameter(budget) : 0.0;
  const auto e = evaluate(ck.online, data, split, budget, lambda);
  json out = eval_json(e);
  out["split"] = to_string(split);
  out["checkpoint"] = checkpoint;
  out["budget"] = {{"mode", budget_mode_name(budget)}, {"value", budget_parameter(budget)}};
  return out;
}

inline std::pair<EvalPoint, EvalPoint> run_points(const fs::path& run_dir) {
  const json r = load_json_file((run_dir / "report.json").string());
  const auto id = run_dir.filename().string();
  const double param = r["budget"]["value"].get<double>();
  const auto& best = r["best"];
  return {EvalPoint{best["val"]["mean_cost"].get<double>(), best["val"]["accuracy"].get<double>(), "val", id, param},
          EvalPoint{best["test"]["mean_cost"].get<double>(), best["test"]["accuracy"].get<double>(), "test", id, param}};
}

// Curve report over finished run directories.
inline json cmd_report(const std::vector<fs::path>& runs, const std::string& method = "rl") {
  if (runs.empty()) throw ConfigError("report: no run directories given");
  std::vector<std::pair<EvalPoint, EvalPoint>> pts;
  double prior = 0.0, max_cost = 0.0;
  for (const auto& r : runs) {
    pts.push_back(run_points(r));
    const json rep = load_json_file((r / "report.json").string());
    prior = rep["prior_accuracy"].get<double>();
    max_cost = rep["max_cost"].get<double>();
  }
  return curve_report(method, pts, prior, max_cost);
}

struct SweepResult {
  std::vector<fs::path> runs;
  std::vector<std::string> failures;
  json curve;
};

// Grid over the budget value and seeds; each run gets its own directory under
// cfg.out_dir. Failed runs are recorded and the curve is built from the rest.
inline SweepResult cmd_sweep(const json& base_cfg, const std::vector<double>& values,
                             const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  if (values.empty() || seeds.empty()) throw ConfigError("sweep: empty grid");
  const fs::path root = base_cfg["out_dir"].get<std::string>();
  std::vector<json> cfgs;
  for (double v : values)
    for (auto s : seeds) {
      json c = base_cfg;
      c["budget"]["value"] = v;
      c["seed"] = s;
      std::ostringstream name;
      name << c["budget"]["mode"].get<std::string>() << '_' << v << "_seed" << s;
      c["out_dir"] = (root / name.str()).string();
      cfgs.push_back(c);
    }
  SweepResult res;
  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t start = 0; start < cfgs.size(); start += jobs) {
    std::vector<std::future<fs::path>> running;
    const auto end = std::min(cfgs.size(), start + jobs);
    for (auto i = start; i < end; ++i)
      running.push_back(std::async(std::launch::async, [&cfgs, i] { return cmd_train(cfgs[i]); }));
    for (auto i = start; i < end; ++i) {
      try {
        res.runs.push_back(running[i - start].get());
      } catch (const std::exception& e) {
        res.failures.push_back(cfgs[i]["out_dir"].get<std::string>() + ": " + e.what());
      }
    }
  }
  fs::create_directories(root);
  if (!res.runs.empty()) {
    res.curve = cmd_report(res.runs);
    res.curve["failures"] = res.failures;
    write_text(root / "curve.json", res.curve.dump(2) + "\n");
  }
  return res;
}

inline json cmd_baseline(const json& cfg, std::vector<double> budgets) {
  const Dataset data = dataset_from_config(cfg);
  if (budgets.empty()) {
    double c = 0.0;
    budgets.push_back(0.0);
    for (double x : data.costs) budgets.push_back(c += x);
  }
  BaselineOptions opt;
  opt.hidden = cfg["hidden"].get<int>();
  opt.seed = cfg["seed"].get<std::uint64_t>();
  opt.head_init_scale = cfg["head_init_scale"].get<double>();
  opt.classifier = {std::max<std::uint64_t>(cfg["pretrain_steps"].get<std::uint64_t>(), 1),
                    cfg["pretrain_batch"].get<std::size_t>(), cfg["lr_pretrain"].get<double>(),
                    cfg["max_grad_norm"].get<double>()};
  const auto order = rfe_order(data);
  const auto pts = baseline_curve(data, order, budgets, opt);
  std::vector<std::pair<EvalPoint, EvalPoint>> pairs;
  for (const auto& p : pts) pairs.emplace_back(p.val, p.test);
  json report = curve_report("baseline", pairs, prior_accuracy(data, SplitId::Test), data.total_cost());
  report["feature_order"] = order;
  return report;
}

// Exact optimum on the train split of a (small, discrete) dataset.
inline json cmd_oracle(const json& cfg) {
  const Dataset data = dataset_from_config(cfg);
  const auto budget = budget_from_config(cfg);
  const auto& rows = data.split.train;
  const auto sol = solve_exact(data, rows, budget);
  const auto pv = policy_value(table_policy(data, rows, sol.policy), data, rows, budget);
  return {{"budget", {{"mode", budget_mode_name(budget)}, {"value", budget_parameter(budget)}}},
          {"split", "train"},
          {"optimal_value", sol.value},
          {"optimal_mean_cost", pv.mean_cost},
          {"optimal_accuracy", pv.accuracy},
          {"nodes", sol.nodes},
          {"policy", policy_table_json(data, rows, sol.policy)}};
}

}  // namespace cwcf
