#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dip {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vec<double>;
using MatrixXd = Mat<double>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ShapeMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values during training or sampling. `step` is the batch index
// (training) or integration step (sampling) where it was detected.
struct Divergence : std::runtime_error {
  Divergence(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  std::int64_t step;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidParameter(msg);
}

}  // namespace dip
