// cwcf: train, evaluate and sweep cost-sensitive classifiers.
//
//   cwcf train    --config run.json [--set key=value ...]
//   cwcf eval     --run DIR [--checkpoint best|final|PATH] [--split val|test|train]
//   cwcf sweep    --config run.json --values 1,2,3 --seeds 1,2 [--jobs N]
//   cwcf baseline --config run.json [--budgets 0,1,2]
//   cwcf oracle   --config run.json
//   cwcf report   DIR [DIR ...]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cwcf/cwcf.hpp"

namespace {

cwcf::json resolved(const std::string& path, const std::vector<std::string>& sets) {
  const cwcf::json file = path.empty() ? cwcf::json::object() : cwcf::load_json_file(path);
  return cwcf::resolve_config(file, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classification with costly features"};
  app.require_subcommand(1);

  std::string config, run_dir, checkpoint = "best", split = "test";
  std::vector<std::string> sets, report_dirs;
  std::vector<double> values, budgets;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;

  auto add_config = [&](CLI::App* c) {
    c->add_option("-c,--config", config, "JSON config file");
    c->add_option("-s,--set", sets, "override key=value (dotted keys)");
  };
  auto* train = app.add_subcommand("train", "train one configuration");
  add_config(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint of a run directory");
  eval->add_option("-r,--run", run_dir, "run directory")->required();
  eval->add_option("--checkpoint", checkpoint, "best, final or a checkpoint path");
  eval->add_option("--split", split, "train, val or test");
  auto* sweep = app.add_subcommand("sweep", "grid over budget values and seeds");
  add_config(sweep);
  sweep->add_option("--values", values, "budget values")->delimiter(',')->required();
  sweep->add_option("--seeds", seeds, "seeds")->delimiter(',')->required();
  sweep->add_option("-j,--jobs", jobs, "concurrent runs");
  auto* baseline = app.add_subcommand("baseline", "feature-ranking baseline curve");
  add_config(baseline);
  baseline->add_option("--budgets", budgets, "cost budgets (default: every prefix)")->delimiter(',');
  auto* oracle = app.add_subcommand("oracle", "exact optimum for a small discrete dataset");
  add_config(oracle);
  auto* report = app.add_subcommand("report", "curve report over run directories");
  report->add_option("runs", report_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      const auto dir = cwcf::cmd_train(resolved(config, sets));
      std::cout << (dir / "report.json").string() << '\n';
    } else if (*eval) {
      std::cout << cwcf::cmd_eval(run_dir, checkpoint, cwcf::parse_split(split)).dump(2) << '\n';
    } else if (*sweep) {
      const auto res = cwcf::cmd_sweep(resolved(config, sets), values, seeds, jobs);
      for (const auto& f : res.failures) std::cerr << "failed: " << f << '\n';
      if (res.runs.empty()) throw cwcf::Error("sweep: every run failed");
      std::cout << res.curve.dump(2) << '\n';
    } else if (*baseline) {
      std::cout << cwcf::cmd_baseline(resolved(config, sets), budgets).dump(2) << '\n';
    } else if (*oracle) {
      std::cout << cwcf::cmd_oracle(resolved(config, sets)).dump(2) << '\n';
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      std::cout << cwcf::cmd_report(dirs).dump(2) << '\n';
    }
  } catch (const cwcf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
