#include <dip/exp/commands.hpp>
#include <dip/exp/theory_suite.hpp>
#include <dip/io.hpp>

#include <chrono>
#include <filesystem>

namespace dip::exp {

RunReport cmd_theory_check(const ExperimentConfig& config) {
  const std::filesystem::path out = config.output_dir;
  const TheorySuiteResult suite = run_theory_suite(config.theory, config.seed);
  RunReport report;
  CsvTable summary({"property", "rows", "worst", "passed", "failure"});
  for (const auto& p : suite.properties) {
    const auto path = out / (p.name + ".csv");
    p.table.write(path);
    report.artifacts.push_back(path.string());
    summary.row({p.name, static_cast<long long>(p.table.rows()), p.worst, static_cast<long long>(p.passed), p.failure});
    report.add(p.name + ".worst", p.worst, "largest residual (or adverse trend step) over the property rows",
               static_cast<Index>(p.table.rows()));
    report.add(p.name + ".passed", p.passed ? 1.0 : 0.0, "all rows within tolerance", static_cast<Index>(p.table.rows()));
    if (!p.passed) {
      report.passed = false;
      report.failures.push_back(p.name + ": " + p.failure);
    }
  }
  summary.write(out / "summary.csv");
  report.artifacts.push_back((out / "summary.csv").string());
  return report;
}

RunReport run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(config.output_dir);
  RunReport report;
  switch (config.experiment) {
    case Experiment::theory_check: report = cmd_theory_check(config); break;
    case Experiment::toy_manifold: report = cmd_toy_manifold(config); break;
    case Experiment::overfit_image: report = cmd_overfit_image(config); break;
    case Experiment::train_gaussian: report = cmd_train_gaussian(config); break;
    case Experiment::sample: report = cmd_sample(config); break;
  }
  report.experiment = experiment_name(config.experiment);
  report.seed = config.seed;
  report.config_hash = config_hash(config);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto path = std::filesystem::path(config.output_dir) / "report.json";
  report.artifacts.push_back(path.string());
  atomic_write(path, report.to_json());
  return report;
}

}  // namespace dip::exp
