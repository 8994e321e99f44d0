#pragma once

#include <dip/nn/parameters.hpp>

namespace dip::nn {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr (m / (1-b1^k)) / (sqrt(v / (1-b2^k)) + eps) - lr wd p
class AdamW {
 public:
  AdamW(const ParameterStore& store, AdamWConfig config = {});

  // Applies one update from the gradients currently held by the store's
  // trainable parameters; parameters without a gradient count as zero.
  void step(ParameterStore& store);

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<VectorXd>& first_moments() const { return m_; }
  const std::vector<VectorXd>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<VectorXd> m, std::vector<VectorXd> v);

 private:
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::vector<std::string> names_;
  std::vector<VectorXd> m_, v_;
};

/// shadow <- decay * shadow + (1 - decay) * param over trainable parameters.
class Ema {
 public:
  explicit Ema(const ParameterStore& store, double decay = 0.9999);

  void update(const ParameterStore& store);
  // Writes the shadow values into the store's parameters.
  void copy_to(ParameterStore& store) const;

  double decay() const { return decay_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<VectorXd>& shadow() const { return shadow_; }
  std::vector<VectorXd>& shadow() { return shadow_; }

 private:
  double decay_;
  std::vector<std::string> names_;
  std::vector<VectorXd> shadow_;
};

}  // namespace dip::nn
