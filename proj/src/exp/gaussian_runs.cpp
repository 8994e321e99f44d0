#include "training.hpp"

#include <dip/exp/commands.hpp>
#include <dip/nn/checkpoint.hpp>

#include <filesystem>

namespace dip::exp {

namespace {

constexpr double kLabelDrop = 0.1;

struct GaussianTask {
  CovarianceModel<double> law;
  std::vector<VectorXd> class_means;
};

// Class means sit at +-offset along the leading eigen-direction.
GaussianTask make_task(const ExperimentConfig& config) {
  const GaussianSection& g = config.gaussian;
  GaussianTask task{build_covariance<double>(config.model.scheme.pixels(), g.decay, g.scale, g.basis,
                                             derive_stream(config.seed, 0x6a)),
                    {}};
  if (g.classes == 1) {
    task.class_means.push_back(task.law.mean);
  } else {
    const VectorXd dir = task.law.eigenbasis.col(0);
    task.class_means.push_back(g.class_offset * dir);
    task.class_means.push_back(-g.class_offset * dir);
  }
  return task;
}

std::filesystem::path checkpoint_path(const ExperimentConfig& config) {
  return config.checkpoint.empty() ? std::filesystem::path(config.output_dir) / "checkpoint.bin"
                                   : std::filesystem::path(config.checkpoint);
}

// Samples per class with the configured sampler and guidance and reports the
// Frechet distance of each class to its true law, averaged over classes.
double evaluate(const VelocityModel& velocity, const GaussianTask& task, const ExperimentConfig& config,
                const std::string& tag, RunReport& report, CsvTable* samples) {
  const Index classes = static_cast<Index>(task.class_means.size());
  const Index n = config.sampler.samples;
  const MatrixXd sigma = task.law.covariance();
  std::optional<GuidanceConfig> guidance;
  if (config.guidance.enabled) guidance = config.guidance.config;
  double total = 0.0;
  for (Index c = 0; c < classes; ++c) {
    std::vector<int> labels;
    if (classes > 1) labels.assign(static_cast<std::size_t>(n), static_cast<int>(c));
    const SamplerConfig sc{static_cast<int>(config.sampler.steps), derive_stream(config.seed, 0x5a0 + static_cast<std::uint64_t>(c))};
    const MatrixXd x = euler_sample(velocity, n, labels, sc, classes > 1 ? guidance : std::nullopt);
    const auto [mean, cov] = empirical_moments(x);
    const double fd = gaussian_frechet<double>(mean, cov, task.class_means[static_cast<std::size_t>(c)], sigma);
    total += fd;
    if (classes > 1)
      report.add("fd." + tag + ".class" + std::to_string(c), fd,
                 "Gaussian Frechet distance of empirical sample moments to the class law", n);
    if (samples)
      for (Index r = 0; r < n; ++r) {
        std::vector<CsvTable::Cell> row{std::string(tag), static_cast<long long>(c), static_cast<long long>(r)};
        for (Index k = 0; k < x.cols(); ++k) row.emplace_back(x(r, k));
        samples->row(std::move(row));
      }
  }
  const double mean_fd = total / static_cast<double>(classes);
  report.add("fd." + tag, mean_fd, "Gaussian Frechet distance of empirical sample moments to the true law, class mean",
             n * classes);
  return mean_fd;
}

CsvTable sample_table(Index dim) {
  std::vector<std::string> header{"source", "label", "sample"};
  for (Index k = 0; k < dim; ++k) header.push_back("x" + std::to_string(k));
  return CsvTable(std::move(header));
}

void evaluate_all(const VelocityModel* trained, const GaussianTask& task, const ExperimentConfig& config,
                  RunReport& report) {
  const std::filesystem::path out = config.output_dir;
  CsvTable samples = sample_table(task.law.dim());
  const GaussianOracleVelocity oracle(task.law, task.class_means);
  const double fd_oracle = evaluate(oracle, task, config, "oracle", report, &samples);
  if (trained) {
    const double fd_model = evaluate(*trained, task, config, "model", report, &samples);
    report.add("fd.excess", fd_model - fd_oracle, "fd.model - fd.oracle", config.sampler.samples);
  }
  report.add("trace_sigma", task.law.trace(), "exact", 1);
  report.add("sampler_steps", static_cast<double>(config.sampler.steps), "Euler steps used for sampling", 1);
  report.add("guidance_scale", config.guidance.enabled ? config.guidance.config.scale : 1.0, "configured", 1);
  samples.write(out / "samples.csv");
  report.artifacts.push_back((out / "samples.csv").string());
}

}  // namespace

RunReport cmd_train_gaussian(const ExperimentConfig& config) {
  const GaussianTask task = make_task(config);
  const Index classes = static_cast<Index>(task.class_means.size());
  DipModel model(config.model, derive_stream(config.seed, 0x6b));
  nn::AdamW opt(model.parameters(), adamw_config(config.training));
  nn::Ema ema(model.parameters(), config.training.ema_decay);

  const MatrixXd factor = task.law.eigenbasis * task.law.eigenvalues.cwiseSqrt().asDiagonal();
  auto source = [&](Index step) {
    RandomStream rng(derive_stream(config.seed, 0x6c), static_cast<std::uint64_t>(step));
    FlowBatch b;
    b.x0.resize(config.training.batch_size, task.law.dim());
    for (Index r = 0; r < b.x0.rows(); ++r) {
      VectorXd z(task.law.dim());
      for (auto& v : z) v = rng.normal();
      const auto c = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(classes)));
      b.x0.row(r) = (task.class_means[c] + factor * z).transpose();
      if (classes > 1) b.labels.push_back(rng.uniform() < kLabelDrop ? -1 : static_cast<int>(c));
    }
    return b;
  };
  const auto fit = train_flow(model.parameters(), opt, config.training, derive_stream(config.seed, 0x6d), source,
                              [&](const MatrixXd& x, std::span<const double> t, std::span<const int> labels) {
                                return model.forward(x, t, labels);
                              },
                              &ema);
  nn::save_checkpoint(checkpoint_path(config), nn::capture(model.parameters(), &opt, &ema, config.seed,
                                                           static_cast<std::uint64_t>(config.training.steps)));
  if (config.training.evaluate_ema) ema.copy_to(model.parameters());

  RunReport report;
  report.artifacts.push_back(checkpoint_path(config).string());
  report.add("final_loss", fit.losses.empty() ? 0.0 : fit.losses.back(), "last training batch loss",
             config.training.batch_size);
  report.add("train_seconds", fit.seconds, "wall clock", 1);
  report.add("parameters", static_cast<double>(model.parameters().count()), "trainable parameter count", 1);
  CsvTable losses({"step", "loss"});
  for (std::size_t i = 0; i < fit.losses.size(); ++i) losses.row({static_cast<long long>(i), fit.losses[i]});
  losses.write(std::filesystem::path(config.output_dir) / "losses.csv");
  report.artifacts.push_back((std::filesystem::path(config.output_dir) / "losses.csv").string());

  const DipVelocity velocity(model);
  evaluate_all(&velocity, task, config, report);
  return report;
}

RunReport cmd_sample(const ExperimentConfig& config) {
  const GaussianTask task = make_task(config);
  RunReport report;
  if (config.sampler.use_oracle) {
    evaluate_all(nullptr, task, config, report);
    return report;
  }
  DipModel model(config.model, derive_stream(config.seed, 0x6b));
  const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint_path(config));
  nn::restore_parameters(ckpt, model.parameters());
  if (config.training.evaluate_ema) {
    nn::Ema ema(model.parameters(), config.training.ema_decay);
    nn::restore_ema(ckpt, ema);
    ema.copy_to(model.parameters());
  }
  const DipVelocity velocity(model);
  evaluate_all(&velocity, task, config, report);
  return report;
}

}  // namespace dip::exp
