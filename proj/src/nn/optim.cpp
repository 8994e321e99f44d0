#include <dip/nn/optim.hpp>

#include <cmath>

namespace dip::nn {

AdamW::AdamW(const ParameterStore& store, AdamWConfig config) : config_(config) {
  require(config.learning_rate > 0, "adamw: learning rate must be positive");
  require(config.weight_decay >= 0, "adamw: weight decay must be non-negative");
  require(config.beta1 >= 0 && config.beta1 < 1 && config.beta2 >= 0 && config.beta2 < 1, "adamw: betas must lie in [0,1)");
  require(config.eps > 0, "adamw: eps must be positive");
  for (const auto& p : store.entries()) {
    if (!p.trainable) continue;
    names_.push_back(p.name);
    m_.push_back(VectorXd::Zero(p.var.size()));
    v_.push_back(VectorXd::Zero(p.var.size()));
  }
}

void AdamW::step(ParameterStore& store) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const Var& p = store.get(names_[i]);
    if (p.grad().size() == p.size() && !p.grad().allFinite())
      throw Divergence("adamw: non-finite gradient for parameter '" + names_[i] + "'", steps_);
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    Var p = store.get(names_[i]);
    VectorXd& value = p.mutable_value();
    if (p.grad().size() == p.size()) {
      const VectorXd& g = p.grad();
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    } else {
      m_[i] *= config_.beta1;
      v_[i] *= config_.beta2;
    }
    if (config_.weight_decay != 0.0) value -= config_.learning_rate * config_.weight_decay * value;
    value.array() -= config_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

void AdamW::restore(std::int64_t steps, std::vector<VectorXd> m, std::vector<VectorXd> v) {
  require(m.size() == names_.size() && v.size() == names_.size(), "adamw: moment count does not match parameters");
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
      throw ShapeMismatch("adamw: moment shape mismatch for '" + names_[i] + "'");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

Ema::Ema(const ParameterStore& store, double decay) : decay_(decay) {
  require(decay >= 0 && decay <= 1, "ema: decay must lie in [0,1]");
  for (const auto& p : store.entries()) {
    if (!p.trainable) continue;
    names_.push_back(p.name);
    shadow_.push_back(p.var.value());
  }
}

void Ema::update(const ParameterStore& store) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const VectorXd& value = store.get(names_[i]).value();
    if (value.size() != shadow_[i].size()) throw ShapeMismatch("ema: shape mismatch for '" + names_[i] + "'");
    shadow_[i] = decay_ * shadow_[i] + (1.0 - decay_) * value;
  }
}

void Ema::copy_to(ParameterStore& store) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    Var p = store.get(names_[i]);
    p.mutable_value() = shadow_[i];
  }
}

}  // namespace dip::nn
