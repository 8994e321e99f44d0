#pragma once

// Experiment configuration: JSON text validated against the shipped schema,
// then read into typed sections with defaults for every omitted field.

#include <dip/flow.hpp>
#include <dip/gaussian_lab.hpp>
#include <dip/model.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dip::exp {

enum class Experiment { theory_check, toy_manifold, overfit_image, train_gaussian, sample };

struct TheorySection {
  Index dim = 16;
  Index patch_dim = 4;
  std::vector<double> alphas{1.5, 2.0, 3.0, 4.0};
  std::vector<double> times{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  Index cases = 200;
  Index max_dim = 16;
  double low_fraction = 0.25;
  Index expansion_dim = 32;
  double expansion_time = 0.5;
  Index gain_grid = 100;
  double tolerance = 1e-8;
  double corrupt_m_hat = 0.0;  // debug: scales M_hat by (1 + value)
};

// Branching curve y(x) on `length` samples: a slow trunk plus signed
// high-frequency offshoots at evenly spaced sites.
struct ToyManifoldSpec {
  Index length = 64;
  Index train_samples = 512;
  Index test_samples = 128;
  double trunk_amplitude = 1.0;
  double trunk_frequency = 1.0;  // cycles over the signal
  Index branches = 4;
  double branch_multiplier = 8.0;
  double branch_amplitude = 0.6;
  double branch_width = 2.5;
  double noise = 0.01;
  Index window = 16;
  Index patch_hidden = 64;
  Index image_hidden = 256;
  double probe_t = 0.3;
  Index plot_samples = 4;

  void validate() const;
  // DCT-II index at which the reported high band starts (frequencies above
  // twice the trunk frequency).
  Index high_band_start() const;
};

struct TrainingSection {
  Index steps = 1000;
  Index batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double ema_decay = 0.999;
  bool evaluate_ema = false;
  TimeSampling time_sampling = TimeSampling::uniform;
  Index log_every = 0;
};

struct SamplerSection {
  Index steps = 100;
  Index samples = 1000;
  bool use_oracle = false;
};

struct GuidanceSection {
  bool enabled = false;
  GuidanceConfig config;
};

struct OverfitSection {
  std::string image;  // empty: procedural pattern
  std::string pattern = "texture";
  double solid_value = 0.25;
  double probe_t = 0.5;
};

struct GaussianSection {
  double decay = 2.0;
  double scale = 1.0;
  BasisKind basis = BasisKind::dct;
  Index classes = 1;
  double class_offset = 1.0;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::theory_check;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  TheorySection theory;
  ToyManifoldSpec toy;
  DipConfig model;
  TrainingSection training;
  SamplerSection sampler;
  GuidanceSection guidance;
  OverfitSection overfit;
  GaussianSection gaussian;
  std::string checkpoint;  // empty: <output_dir>/checkpoint.bin
};

// The schema shipped with the tool, as embedded at build time.
const std::string& experiment_schema();

// Throws InvalidParameter naming the offending JSON pointer.
void validate_against_schema(const std::string& json_text);
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Canonical JSON with every field present; the basis of the config hash.
std::string canonical_json(const ExperimentConfig& config);
// FNV-1a 64 of canonical_json, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

std::string experiment_name(Experiment e);

}  // namespace dip::exp
