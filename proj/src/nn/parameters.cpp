#include <dip/nn/parameters.hpp>

#include <cmath>

namespace dip::nn {

Var ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (name.empty()) throw InvalidParameter("parameter name must not be empty");
  if (contains(name)) throw InvalidParameter("duplicate parameter name '" + name + "'");
  Var v = leaf(std::move(init), trainable);
  index_.emplace(name, params_.size());
  params_.push_back({name, v, trainable});
  return v;
}

const Var& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidParameter("unknown parameter '" + name + "'");
  return params_[it->second].var;
}

Index ParameterStore::count(const std::string& prefix) const {
  Index n = 0;
  for (const auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.var.size();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.node()->grad.resize(0);
}

VectorXd fan_in_uniform(RandomStream& rng, Index count, Index fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(1, fan_in)));
  VectorXd v(count);
  for (auto& x : v) x = bound * (2.0 * rng.uniform() - 1.0);
  return v;
}

Dense make_dense(ParameterStore& store, const std::string& name, Index in, Index out, RandomStream& rng, Init init) {
  const bool zero = init == Init::zero;
  Dense d;
  d.weight = store.add(name + ".weight", {{in, out}, zero ? VectorXd::Zero(in * out) : fan_in_uniform(rng, in * out, in)});
  d.bias = store.add(name + ".bias", {{out}, zero ? VectorXd::Zero(out) : fan_in_uniform(rng, out, in)});
  return d;
}

Conv2d make_conv(ParameterStore& store, const std::string& name, Index in_ch, Index out_ch, Index kernel, Index pad,
                 RandomStream& rng, Init init) {
  const bool zero = init == Init::zero;
  const Index fan_in = in_ch * kernel * kernel, n = out_ch * fan_in;
  Conv2d c;
  c.weight = store.add(name + ".weight", {{out_ch, in_ch, kernel, kernel}, zero ? VectorXd::Zero(n) : fan_in_uniform(rng, n, fan_in)});
  c.bias = store.add(name + ".bias", {{out_ch}, zero ? VectorXd::Zero(out_ch) : fan_in_uniform(rng, out_ch, fan_in)});
  c.pad = pad;
  return c;
}

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, Index width) {
  return {store.add(name + ".gamma", {{width}, VectorXd::Ones(width)}), store.add(name + ".beta", Tensor::zeros({width}))};
}

}  // namespace dip::nn
