#pragma once

// The five experiment commands. Each writes its artifacts and report.json
// under config.output_dir and returns the report; `passed` is false when a
// checked property fails.

#include <dip/exp/config.hpp>
#include <dip/exp/report.hpp>

namespace dip::exp {

RunReport cmd_theory_check(const ExperimentConfig& config);
RunReport cmd_toy_manifold(const ExperimentConfig& config);
RunReport cmd_overfit_image(const ExperimentConfig& config);
RunReport cmd_train_gaussian(const ExperimentConfig& config);
RunReport cmd_sample(const ExperimentConfig& config);

// Dispatches on config.experiment, stamps seed, hash and wall clock, and
// writes report.json.
RunReport run_experiment(const ExperimentConfig& config);

}  // namespace dip::exp
