#pragma once

#include <dip/nn/ops.hpp>
#include <dip/random.hpp>

#include <optional>
#include <unordered_map>

namespace dip::nn {

struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

/// Named parameters in insertion order. Names are unique.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Parameter>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  Index count(const std::string& prefix = "") const;
  std::vector<std::string> names() const;

  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
VectorXd fan_in_uniform(RandomStream& rng, Index count, Index fan_in);

struct Dense {
  Var weight, bias;
  Var operator()(const Var& x) const { return dense(x, weight, bias); }
};

struct Conv2d {
  Var weight, bias;
  Index pad = 0;
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, pad); }
};

struct LayerNorm {
  Var gamma, beta;
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

enum class Init { fan_in, zero };

Dense make_dense(ParameterStore& store, const std::string& name, Index in, Index out, RandomStream& rng,
                 Init init = Init::fan_in);
Conv2d make_conv(ParameterStore& store, const std::string& name, Index in_ch, Index out_ch, Index kernel, Index pad,
                 RandomStream& rng, Init init = Init::fan_in);
LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, Index width);

}  // namespace dip::nn
