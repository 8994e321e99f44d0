#include <dip/nn/gradcheck.hpp>
#include <dip/random.hpp>

#include <algorithm>
#include <cmath>

namespace dip::nn {

GradCheckResult gradient_check(const std::string& name, const std::vector<Var>& inputs, const std::function<Var()>& loss,
                               const GradCheckOptions& options) {
  for (const auto& in : inputs) {
    in.node()->grad.resize(0);
    if (!in.requires_grad()) throw InvalidParameter("gradient_check: input of '" + name + "' does not require grad");
  }
  backward(loss());
  std::vector<VectorXd> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad().size() == in.size() ? in.grad() : VectorXd::Zero(in.size()));

  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (Index j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  if (options.max_coordinates > 0 && static_cast<Index>(coords.size()) > options.max_coordinates) {
    RandomStream rng(options.seed, 0x6c);
    for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_coordinates); ++i)
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(static_cast<std::size_t>(options.max_coordinates));
  }

  GradCheckResult result{name, static_cast<Index>(coords.size()), 0.0, true};
  for (const auto& [i, j] : coords) {
    Var in = inputs[i];
    double& x = in.mutable_value()(j);
    const double saved = x;
    x = saved + options.step;
    const double up = loss().value()(0);
    x = saved - options.step;
    const double down = loss().value()(0);
    x = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[i](j);
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
  }
  result.passed = std::isfinite(result.max_relative_error) && result.max_relative_error <= options.tolerance;
  for (const auto& in : inputs) in.node()->grad.resize(0);
  return result;
}

}  // namespace dip::nn
