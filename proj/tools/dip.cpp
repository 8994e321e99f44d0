// dip: experiment harness command line.

#include <dip/exp/commands.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

enum Exit { kOk = 0, kInvalidConfig = 1, kPropertyFailure = 2, kDivergence = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-detailer diffusion experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;

  const std::pair<const char*, const char*> commands[] = {
      {"theory-check", "closed-form operator property suite"},
      {"toy-manifold", "patch-level vs image-level input on the branching-curve toy"},
      {"overfit-image", "single-image overfit: backbone-only vs detailer head"},
      {"train-gaussian", "train on synthetic Gaussian images, checkpoint and evaluate"},
      {"sample", "sample from a checkpoint (or the exact oracle) and evaluate"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "seed (overrides seed)");
    sub->add_option("--steps", steps, "Euler sampler steps (overrides sampler.steps)")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  dip::exp::ExperimentConfig config;
  try {
    config = dip::exp::load_config(config_path);
    if (dip::exp::experiment_name(config.experiment) != command)
      throw dip::InvalidParameter("config names experiment '" + dip::exp::experiment_name(config.experiment) +
                                  "' but the command is '" + command + "'");
    if (!out_dir.empty()) config.output_dir = out_dir;
    if (seed) config.seed = *seed;
    if (steps) config.sampler.steps = *steps;
  } catch (const std::exception& e) {
    std::cerr << "dip: invalid config: " << e.what() << "\n";
    return kInvalidConfig;
  }

  try {
    const auto report = dip::exp::run_experiment(config);
    for (const auto& m : report.metrics) std::cout << m.name << " = " << m.value << "\n";
    std::cout << "report: " << report.artifacts.back() << "\n";
    if (!report.passed) {
      for (const auto& f : report.failures) std::cerr << "FAILED " << f << "\n";
      return kPropertyFailure;
    }
    return kOk;
  } catch (const dip::Divergence& e) {
    std::cerr << "dip: divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "dip: error: " << e.what() << "\n";
    return kInvalidConfig;
  }
}
