#pragma once

// Flow-matching interpolant and target, Monte Carlo loss, Euler sampling with
// interval classifier-free guidance, analytic Gaussian velocity fields, and
// the Gaussian Frechet distance.
//
// Time runs from t = 0 (data) to t = 1 (noise): x_t = (1-t) x0 + t eps, and a
// velocity model predicts eps - x0 = dx_t/dt.

#include <dip/gaussian_lab.hpp>
#include <dip/parallel.hpp>
#include <dip/theory.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace dip {

template <typename Scalar>
struct FlowState {
  Mat<Scalar> x;
  Scalar t;
};

template <typename DerivedA, typename DerivedB>
FlowState<typename DerivedA::Scalar> interpolate(const Eigen::MatrixBase<DerivedA>& x0,
                                                 const Eigen::MatrixBase<DerivedB>& eps,
                                                 typename DerivedA::Scalar t) {
  using Scalar = typename DerivedA::Scalar;
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeMismatch("interpolate: x0 and eps shapes differ");
  if (!(t >= Scalar(0) && t <= Scalar(1))) throw DomainError("interpolate: t must lie in [0,1]");
  return {(Scalar(1) - t) * x0 + t * eps, t};
}

template <typename DerivedA, typename DerivedB>
Mat<typename DerivedA::Scalar> fm_target(const Eigen::MatrixBase<DerivedA>& x0, const Eigen::MatrixBase<DerivedB>& eps) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeMismatch("fm_target: x0 and eps shapes differ");
  return eps - x0;
}

/// Anything that maps (states, per-row time, per-row label) to velocities of
/// the same shape. Rows are samples.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  virtual Index dim() const = 0;
  virtual MatrixXd velocity(const MatrixXd& x, std::span<const double> t, std::span<const int> labels) const = 0;
};

class ZeroVelocity final : public VelocityModel {
 public:
  explicit ZeroVelocity(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  MatrixXd velocity(const MatrixXd& x, std::span<const double>, std::span<const int>) const override {
    return MatrixXd::Zero(x.rows(), x.cols());
  }

 private:
  Index dim_;
};

/// Exact conditional-expectation velocity for Gaussian classes sharing one
/// covariance. Label k in [0, K) selects class k; any other label (the null
/// label) gets the velocity of the equal-weight mixture. With K = 1 this is
/// the full-information (DiP) field A M (x - (1-t) mu) - mu for every patch.
class GaussianOracleVelocity final : public VelocityModel {
 public:
  GaussianOracleVelocity(const CovarianceModel<double>& model, std::vector<VectorXd> class_means = {})
      : basis_(model.eigenbasis), eigenvalues_(model.eigenvalues), means_(std::move(class_means)) {
    if (means_.empty()) means_.push_back(model.mean);
    for (const auto& m : means_) require(m.size() == model.dim(), "oracle velocity: class mean length");
  }

  Index dim() const override { return eigenvalues_.size(); }
  Index num_classes() const { return static_cast<Index>(means_.size()); }

  MatrixXd velocity(const MatrixXd& x, std::span<const double> t, std::span<const int> labels) const override {
    if (x.cols() != dim()) throw ShapeMismatch("oracle velocity: state width differs from model dim");
    if (static_cast<Index>(t.size()) != x.rows()) throw ShapeMismatch("oracle velocity: one time per row required");
    MatrixXd out(x.rows(), x.cols());
    for (Index row = 0; row < x.rows(); ++row) {
      const int label = labels.empty() ? -1 : labels[row];
      const VectorXd xr = x.row(row).transpose();
      out.row(row) = (label >= 0 && label < num_classes()) ? class_velocity(xr, t[row], label).transpose()
                                                            : mixture_velocity(xr, t[row]).transpose();
    }
    return out;
  }

  VectorXd class_velocity(const VectorXd& x, double t, Index k) const {
    const VectorXd gains = eigenvalues_.unaryExpr([t](double lam) { return gain_coefficient(lam, t); });
    return basis_ * (gains.asDiagonal() * (basis_.transpose() * (x - (1.0 - t) * means_[k]))) - means_[k];
  }

  VectorXd mixture_velocity(const VectorXd& x, double t) const {
    if (num_classes() == 1) return class_velocity(x, t, 0);
    // Posterior class weights under N((1-t) mu_k, (1-t)^2 Sigma + t^2 I).
    const VectorXd var = ((1.0 - t) * (1.0 - t) * eigenvalues_.array() + t * t).matrix();
    std::vector<double> logw(means_.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < means_.size(); ++k) {
      const VectorXd z = basis_.transpose() * (x - (1.0 - t) * means_[k]);
      logw[k] = -0.5 * (z.array().square() / var.array()).sum();
      best = std::max(best, logw[k]);
    }
    double total = 0.0;
    for (auto& lw : logw) total += (lw = std::exp(lw - best));
    VectorXd v = VectorXd::Zero(dim());
    for (std::size_t k = 0; k < means_.size(); ++k) v += (logw[k] / total) * class_velocity(x, t, static_cast<Index>(k));
    return v;
  }

 private:
  MatrixXd basis_;
  VectorXd eigenvalues_;
  std::vector<VectorXd> means_;
};

struct GuidanceConfig {
  double scale = 2.9;
  double interval_lo = 0.11;
  double interval_hi = 0.97;
  int null_label = -1;

  void validate() const {
    require(0.0 <= interval_lo && interval_lo < interval_hi && interval_hi <= 1.0,
            "guidance: need 0 <= interval_lo < interval_hi <= 1");
    require(scale >= 1.0, "guidance: scale must be >= 1");
  }
  bool active_at(double t) const { return t >= interval_lo && t <= interval_hi; }
};

struct SamplerConfig {
  int steps = 100;
  std::uint64_t seed = 0;
};

/// Interval CFG: v_u + w (v_c - v_u) inside [lo, hi] (inclusive), v_c outside
/// or when w == 1.
inline MatrixXd guided_velocity(const VelocityModel& model, const MatrixXd& x, double t, std::span<const int> labels,
                                const GuidanceConfig& guidance) {
  for (int label : labels)
    if (label == guidance.null_label) throw InvalidParameter("guided_velocity: conditional label equals null label");
  const std::vector<double> times(static_cast<std::size_t>(x.rows()), t);
  MatrixXd v_cond = model.velocity(x, times, labels);
  if (!guidance.active_at(t) || guidance.scale == 1.0) return v_cond;
  const std::vector<int> nulls(static_cast<std::size_t>(x.rows()), guidance.null_label);
  const MatrixXd v_uncond = model.velocity(x, times, nulls);
  return v_uncond + guidance.scale * (v_cond - v_uncond);
}

struct TrajectoryRow {
  int step;
  double t;
  double x_norm;
  double v_norm;
};

/// Starts from N(0, I) at t = 1 and integrates x <- x + dt * v with dt = -1/steps
/// down to t = 0. Labels may be empty (unconditional).
inline MatrixXd euler_sample(const VelocityModel& model, Index count, std::span<const int> labels,
                             const SamplerConfig& sampler, const std::optional<GuidanceConfig>& guidance,
                             std::vector<TrajectoryRow>* trajectory = nullptr) {
  require(sampler.steps >= 1, "euler_sample: steps must be >= 1");
  require(count >= 1, "euler_sample: count must be >= 1");
  require(labels.empty() || static_cast<Index>(labels.size()) == count, "euler_sample: one label per sample");
  if (guidance) {
    guidance->validate();
    require(!labels.empty(), "euler_sample: guidance needs labels");
  }
  const Index d = model.dim();
  RandomStream rng(sampler.seed, 0x5a3b);
  MatrixXd x(count, d);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < d; ++c) x(r, c) = rng.normal();

  const double dt = -1.0 / sampler.steps;
  for (int k = 0; k < sampler.steps; ++k) {
    const double t = 1.0 - static_cast<double>(k) / sampler.steps;
    MatrixXd v(count, d);
    parallel_for(count, [&](long begin, long end) {
      const MatrixXd xs = x.middleRows(begin, end - begin);
      const auto lab = labels.empty() ? std::span<const int>{} : labels.subspan(begin, end - begin);
      if (guidance) {
        v.middleRows(begin, end - begin) = guided_velocity(model, xs, t, lab, *guidance);
      } else {
        const std::vector<double> times(static_cast<std::size_t>(end - begin), t);
        v.middleRows(begin, end - begin) = model.velocity(xs, times, lab);
      }
    });
    x += dt * v;
    if (!x.allFinite()) throw Divergence("euler_sample: non-finite state", k);
    if (trajectory) trajectory->push_back({k, t, x.norm(), v.norm()});
  }
  return x;
}

/// One Monte Carlo draw of the flow-matching objective.
struct FlowDraw {
  VectorXd x0;
  VectorXd eps;
  double t;
  VectorXd x_t;
  int label;
};

/// Per-row t ~ U[0,1] and eps ~ N(0, I) (row-major), from streams derived
/// from `seed`. Shared by Monte Carlo losses and network training.
struct FmBatch {
  MatrixXd x0, eps, x_t, target;
  std::vector<double> t;
};

/// Training-time distribution of t. logit_normal draws sigmoid(n), n ~ N(0, 1).
enum class TimeSampling { uniform, logit_normal };

inline FmBatch draw_fm_batch(const MatrixXd& x0, std::uint64_t seed, TimeSampling sampling = TimeSampling::uniform) {
  require(x0.rows() >= 1, "fm batch: empty batch");
  FmBatch b;
  b.x0 = x0;
  b.eps.resize(x0.rows(), x0.cols());
  b.t.resize(static_cast<std::size_t>(x0.rows()));
  RandomStream time_rng(seed, 0x7157);
  RandomStream noise_rng(seed, 0xe95);
  for (Index r = 0; r < x0.rows(); ++r) {
    b.t[static_cast<std::size_t>(r)] =
        sampling == TimeSampling::uniform ? time_rng.uniform() : 1.0 / (1.0 + std::exp(-time_rng.normal()));
    for (Index c = 0; c < x0.cols(); ++c) b.eps(r, c) = noise_rng.normal();
  }
  b.x_t.resize(x0.rows(), x0.cols());
  for (Index r = 0; r < x0.rows(); ++r) {
    const double t = b.t[static_cast<std::size_t>(r)];
    b.x_t.row(r) = (1.0 - t) * x0.row(r) + t * b.eps.row(r);
  }
  b.target = b.eps - b.x0;
  return b;
}

struct LossEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  Index count = 0;
  std::vector<double> per_sample;  // ||prediction - (eps - x0)||^2
};

inline LossEstimate summarize_losses(std::vector<double> values) {
  LossEstimate est;
  est.count = static_cast<Index>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  est.mean = sum / static_cast<double>(est.count);
  double ss = 0.0;
  for (double v : values) ss += (v - est.mean) * (v - est.mean);
  est.std_error = est.count > 1 ? std::sqrt(ss / static_cast<double>(est.count - 1) / static_cast<double>(est.count)) : 0.0;
  est.per_sample = std::move(values);
  return est;
}

/// Monte Carlo flow-matching loss E ||v(x_t, t) - (eps - x0)||^2 over the
/// rows of x0. Throws Divergence naming the row on non-finite output.
inline LossEstimate fm_loss(const VelocityModel& model, const MatrixXd& x0, std::span<const int> labels,
                            std::uint64_t seed) {
  const FmBatch batch = draw_fm_batch(x0, seed);
  const MatrixXd pred = model.velocity(batch.x_t, batch.t, labels);
  std::vector<double> losses(static_cast<std::size_t>(x0.rows()));
  for (Index r = 0; r < x0.rows(); ++r) {
    if (!pred.row(r).allFinite()) throw Divergence("fm_loss: non-finite model output", r);
    losses[static_cast<std::size_t>(r)] = (pred.row(r) - batch.target.row(r)).squaredNorm();
  }
  return summarize_losses(std::move(losses));
}

/// Same protocol for predictors that condition on something other than x_t
/// (e.g. a restricted effective-information oracle that sees the draw's
/// components).
inline LossEstimate fm_loss_with_information(const std::function<VectorXd(const FlowDraw&)>& predictor,
                                             const MatrixXd& x0, std::uint64_t seed) {
  const FmBatch batch = draw_fm_batch(x0, seed);
  std::vector<double> losses(static_cast<std::size_t>(x0.rows()));
  parallel_for(x0.rows(), [&](long begin, long end) {
    for (long r = begin; r < end; ++r) {
      FlowDraw draw{batch.x0.row(r).transpose(), batch.eps.row(r).transpose(), batch.t[static_cast<std::size_t>(r)],
                    batch.x_t.row(r).transpose(), -1};
      const VectorXd pred = predictor(draw);
      if (!pred.allFinite()) throw Divergence("fm_loss: non-finite model output", r);
      losses[static_cast<std::size_t>(r)] = (pred - batch.target.row(r).transpose()).squaredNorm();
    }
  });
  return summarize_losses(std::move(losses));
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues below 1e-12
/// are clamped to zero.
template <typename Scalar>
Mat<Scalar> psd_sqrt(const Mat<Scalar>& m) {
  Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(Scalar(0.5) * (m + m.transpose()));
  const Vec<Scalar> root = es.eigenvalues().unaryExpr([](Scalar x) { return x < Scalar(1e-12) ? Scalar(0) : std::sqrt(x); });
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
template <typename Scalar>
Scalar gaussian_frechet(const Vec<Scalar>& mean_a, const Mat<Scalar>& cov_a, const Vec<Scalar>& mean_b,
                        const Mat<Scalar>& cov_b) {
  const Index d = mean_a.size();
  if (mean_b.size() != d || cov_a.rows() != d || cov_a.cols() != d || cov_b.rows() != d || cov_b.cols() != d)
    throw ShapeMismatch("gaussian_frechet: dimension mismatch");
  for (const Mat<Scalar>* cov : {&cov_a, &cov_b}) {
    const Mat<Scalar> sym = Scalar(0.5) * (*cov + cov->transpose());
    const Scalar scale = std::max(Scalar(1), sym.cwiseAbs().maxCoeff());
    if ((sym - *cov).cwiseAbs().maxCoeff() > Scalar(1e-8) * scale)
      throw InvalidParameter("gaussian_frechet: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(sym, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -Scalar(1e-9) * scale)
      throw InvalidParameter("gaussian_frechet: covariance is not positive semidefinite");
  }
  const Mat<Scalar> root_a = psd_sqrt(cov_a);
  const Mat<Scalar> cross = psd_sqrt<Scalar>(root_a * cov_b * root_a);
  return (mean_a - mean_b).squaredNorm() + cov_a.trace() + cov_b.trace() - Scalar(2) * cross.trace();
}

/// Sample mean and unbiased covariance of the rows.
inline std::pair<VectorXd, MatrixXd> empirical_moments(const MatrixXd& rows) {
  const VectorXd mean = rows.colwise().mean().transpose();
  const MatrixXd centered = rows.rowwise() - mean.transpose();
  MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Index>(1, rows.rows() - 1));
  return {mean, cov};
}

}  // namespace dip
