#pragma once

// Gaussian data laws with power-law spectra, low/high frequency splits,
// patch selection, and the Gaussian conditioning oracle.

#include <dip/common.hpp>
#include <dip/random.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace dip {

enum class BasisKind { identity, random_orthogonal, dct };

template <typename Scalar>
struct CovarianceModel {
  Vec<Scalar> mean;
  Vec<Scalar> eigenvalues;  // non-increasing, strictly positive
  Mat<Scalar> eigenbasis;   // orthonormal columns u_i
  std::optional<Scalar> decay_exponent;
  std::optional<std::uint64_t> seed;

  Index dim() const { return eigenvalues.size(); }

  Mat<Scalar> covariance() const {
    return eigenbasis * eigenvalues.asDiagonal() * eigenbasis.transpose();
  }

  Scalar trace() const { return eigenvalues.sum(); }
};

/// Orthonormal DCT-II basis; column k is the k-th frequency.
template <typename Scalar>
Mat<Scalar> dct_basis(Index dim) {
  Mat<Scalar> basis(dim, dim);
  const Scalar pi = std::numbers::pi_v<Scalar>;
  for (Index k = 0; k < dim; ++k) {
    const Scalar norm = std::sqrt((k == 0 ? Scalar(1) : Scalar(2)) / Scalar(dim));
    for (Index n = 0; n < dim; ++n) {
      basis(n, k) = norm * std::cos(pi * (Scalar(n) + Scalar(0.5)) * Scalar(k) / Scalar(dim));
    }
  }
  return basis;
}

/// QR of a seeded standard-normal matrix (filled row-major), with column signs
/// fixed so that diag(R) > 0. Unique for a given seed.
template <typename Scalar>
Mat<Scalar> random_orthogonal(Index dim, std::uint64_t seed) {
  RandomStream rng(seed, 0x0b5e);
  Mat<Scalar> gauss(dim, dim);
  for (Index r = 0; r < dim; ++r)
    for (Index c = 0; c < dim; ++c) gauss(r, c) = Scalar(rng.normal());
  Eigen::HouseholderQR<Mat<Scalar>> qr(gauss);
  Mat<Scalar> q = qr.householderQ() * Mat<Scalar>::Identity(dim, dim);
  const Mat<Scalar> r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (Index c = 0; c < dim; ++c)
    if (r(c, c) < Scalar(0)) q.col(c) *= Scalar(-1);
  return q;
}

template <typename Scalar>
CovarianceModel<Scalar> build_covariance(Index dim, Scalar decay_exponent, Scalar scale,
                                         BasisKind basis_kind, std::uint64_t seed = 0) {
  require(dim >= 1, "build_covariance: dim must be >= 1");
  require(scale > Scalar(0), "build_covariance: scale must be > 0");
  require(decay_exponent > Scalar(1), "build_covariance: decay_exponent must be > 1");

  CovarianceModel<Scalar> model;
  model.mean = Vec<Scalar>::Zero(dim);
  model.eigenvalues.resize(dim);
  for (Index i = 0; i < dim; ++i)
    model.eigenvalues(i) = scale * std::pow(Scalar(i + 1), -decay_exponent);
  switch (basis_kind) {
    case BasisKind::identity:
      model.eigenbasis = Mat<Scalar>::Identity(dim, dim);
      break;
    case BasisKind::random_orthogonal:
      model.eigenbasis = random_orthogonal<Scalar>(dim, seed);
      model.seed = seed;
      break;
    case BasisKind::dct:
      model.eigenbasis = dct_basis<Scalar>(dim);
      break;
  }
  model.decay_exponent = decay_exponent;
  return model;
}

/// Checks the CovarianceModel invariants; throws InvalidParameter on violation.
template <typename Scalar>
void validate(const CovarianceModel<Scalar>& model, Scalar tol = Scalar(1e-10)) {
  const Index d = model.dim();
  require(d >= 1, "covariance model: empty");
  require(model.mean.size() == d, "covariance model: mean length differs from dim");
  require(model.eigenbasis.rows() == d && model.eigenbasis.cols() == d,
          "covariance model: eigenbasis must be dim x dim");
  for (Index i = 0; i < d; ++i) {
    require(model.eigenvalues(i) > Scalar(0), "covariance model: eigenvalues must be positive");
    if (i > 0)
      require(model.eigenvalues(i) <= model.eigenvalues(i - 1),
              "covariance model: eigenvalues must be non-increasing");
  }
  const Scalar err =
      (model.eigenbasis.transpose() * model.eigenbasis - Mat<Scalar>::Identity(d, d)).cwiseAbs().maxCoeff();
  require(err <= tol, "covariance model: eigenbasis is not orthonormal");
}

template <typename Scalar>
struct FrequencySplit {
  Scalar threshold;
  Index rank;  // number of eigenvalues strictly above threshold
  Mat<Scalar> sigma_low;
  Mat<Scalar> sigma_high;
};

template <typename Scalar>
FrequencySplit<Scalar> split_frequencies(const CovarianceModel<Scalar>& model, Scalar threshold) {
  require(threshold > Scalar(0), "split_frequencies: threshold must be > 0");
  const Index d = model.dim();
  Index rank = 0;
  while (rank < d && model.eigenvalues(rank) > threshold) ++rank;

  FrequencySplit<Scalar> split{threshold, rank, Mat<Scalar>::Zero(d, d), Mat<Scalar>::Zero(d, d)};
  const auto& u = model.eigenbasis;
  const auto& lambda = model.eigenvalues;
  split.sigma_low = u.leftCols(rank) * lambda.head(rank).asDiagonal() * u.leftCols(rank).transpose();
  split.sigma_high = model.covariance() - split.sigma_low;
  return split;
}

/// Absolute threshold keeping round(keep_fraction * d) eigenvalues in the low band.
template <typename Scalar>
Scalar threshold_for_quantile(const CovarianceModel<Scalar>& model, double keep_fraction) {
  require(keep_fraction >= 0.0 && keep_fraction <= 1.0, "threshold_for_quantile: fraction outside [0,1]");
  const Index d = model.dim();
  const auto keep = static_cast<Index>(std::lround(keep_fraction * static_cast<double>(d)));
  if (keep >= d) return model.eigenvalues(d - 1) / Scalar(2);
  // lambda_keep > lambda_{keep+1} = threshold, and "> threshold" is strict.
  return model.eigenvalues(keep);
}

enum class PatchLayout { contiguous, strided };

struct PatchScheme {
  Index total_dim = 0;
  Index patch_dim = 0;
  std::vector<std::vector<Index>> index_map;

  Index num_patches() const { return static_cast<Index>(index_map.size()); }

  template <typename Scalar = double>
  Mat<Scalar> selection(Index s) const {
    Mat<Scalar> p = Mat<Scalar>::Zero(patch_dim, total_dim);
    for (Index k = 0; k < patch_dim; ++k) p(k, index_map[s][k]) = Scalar(1);
    return p;
  }

  /// (P^(s))^T P^(s): the diagonal 0/1 mask of patch s.
  template <typename Scalar = double>
  Mat<Scalar> projector(Index s) const {
    Mat<Scalar> m = Mat<Scalar>::Zero(total_dim, total_dim);
    for (Index idx : index_map[s]) m(idx, idx) = Scalar(1);
    return m;
  }

  template <typename Derived>
  Vec<typename Derived::Scalar> gather(const Eigen::MatrixBase<Derived>& x, Index s) const {
    Vec<typename Derived::Scalar> out(patch_dim);
    for (Index k = 0; k < patch_dim; ++k) out(k) = x(index_map[s][k]);
    return out;
  }

  template <typename Scalar>
  Vec<Scalar> assemble(const std::vector<Vec<Scalar>>& patches) const {
    require(static_cast<Index>(patches.size()) == num_patches(), "assemble: wrong patch count");
    Vec<Scalar> x(total_dim);
    for (Index s = 0; s < num_patches(); ++s)
      for (Index k = 0; k < patch_dim; ++k) x(index_map[s][k]) = patches[s](k);
    return x;
  }
};

inline PatchScheme build_patch_scheme(Index total_dim, Index patch_dim, PatchLayout layout) {
  require(total_dim >= 1 && patch_dim >= 1, "build_patch_scheme: dims must be positive");
  require(total_dim % patch_dim == 0, "build_patch_scheme: patch_dim must divide total_dim");
  PatchScheme scheme{total_dim, patch_dim, {}};
  const Index n = total_dim / patch_dim;
  scheme.index_map.resize(n);
  for (Index s = 0; s < n; ++s) {
    auto& ids = scheme.index_map[s];
    ids.resize(patch_dim);
    for (Index k = 0; k < patch_dim; ++k)
      ids[k] = layout == PatchLayout::contiguous ? s * patch_dim + k : s + k * n;
  }
  return scheme;
}

/// Contiguous blocks over a seeded random permutation of the coordinates.
inline PatchScheme build_permuted_patch_scheme(Index total_dim, Index patch_dim, std::uint64_t seed) {
  PatchScheme scheme = build_patch_scheme(total_dim, patch_dim, PatchLayout::contiguous);
  std::vector<Index> perm(total_dim);
  std::iota(perm.begin(), perm.end(), Index{0});
  RandomStream rng(seed, 0x9e4);
  for (Index i = total_dim - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  for (auto& ids : scheme.index_map)
    for (auto& idx : ids) idx = perm[idx];
  return scheme;
}

/// Rows are i.i.d. draws mu + U Lambda^{1/2} z; z is filled row by row.
template <typename Scalar>
Mat<Scalar> sample_data(const CovarianceModel<Scalar>& model, Index count, std::uint64_t seed) {
  require(count >= 1, "sample_data: count must be >= 1");
  const Index d = model.dim();
  RandomStream rng(seed, 0xda7a);
  Mat<Scalar> z(count, d);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < d; ++c) z(r, c) = Scalar(rng.normal());
  const Mat<Scalar> factor = model.eigenbasis * model.eigenvalues.cwiseSqrt().asDiagonal();
  Mat<Scalar> x = z * factor.transpose();
  x.rowwise() += model.mean.transpose();
  return x;
}

/// Stacked Gaussian vector with named blocks.
template <typename Scalar>
struct JointGaussian {
  struct Block {
    std::string name;
    Index offset;
    Index size;
  };

  Vec<Scalar> mean;
  Mat<Scalar> cov;
  std::vector<Block> blocks;

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw InvalidParameter("joint gaussian: no block named '" + name + "'");
  }

  /// Each named block is `map * latent + offset` for a shared latent
  /// N(latent_mean, latent_cov).
  struct LinearView {
    std::string name;
    Mat<Scalar> map;
    Vec<Scalar> offset;
  };

  static JointGaussian from_linear_views(const Vec<Scalar>& latent_mean, const Mat<Scalar>& latent_cov,
                                         const std::vector<LinearView>& views) {
    Index total = 0;
    for (const auto& v : views) {
      require(v.map.cols() == latent_mean.size(), "joint gaussian: view '" + v.name + "' has wrong width");
      require(v.offset.size() == v.map.rows(), "joint gaussian: view '" + v.name + "' offset size");
      total += v.map.rows();
    }
    Mat<Scalar> stacked(total, latent_mean.size());
    Vec<Scalar> offset(total);
    JointGaussian joint;
    Index row = 0;
    for (const auto& v : views) {
      stacked.middleRows(row, v.map.rows()) = v.map;
      offset.segment(row, v.map.rows()) = v.offset;
      joint.blocks.push_back({v.name, row, v.map.rows()});
      row += v.map.rows();
    }
    joint.mean = stacked * latent_mean + offset;
    joint.cov = stacked * latent_cov * stacked.transpose();
    joint.cov = Scalar(0.5) * (joint.cov + joint.cov.transpose());
    return joint;
  }
};

template <typename Scalar>
struct ConditionalGaussian {
  Vec<Scalar> mean;
  Mat<Scalar> cov;
};

/// E[Y|X=x] = E Y + Cov(Y,X) Cov(X,X)^{-1} (x - E X), with a ridge of
/// ridge_scale * trace/dim on Cov(X,X). ridge_scale = 0 conditions exactly and
/// requires a positive definite Cov(X,X).
template <typename Scalar>
ConditionalGaussian<Scalar> condition_gaussian(const JointGaussian<Scalar>& joint, const std::string& target_block,
                                               const std::string& observed_block, const Vec<Scalar>& observation,
                                               Scalar ridge_scale = Scalar(1e-10)) {
  const auto& ty = joint.block(target_block);
  const auto& tx = joint.block(observed_block);
  if (observation.size() != tx.size)
    throw ShapeMismatch("condition_gaussian: observation length " + std::to_string(observation.size()) +
                        " != block '" + observed_block + "' size " + std::to_string(tx.size));

  Mat<Scalar> sxx = joint.cov.block(tx.offset, tx.offset, tx.size, tx.size);
  const Mat<Scalar> syx = joint.cov.block(ty.offset, tx.offset, ty.size, tx.size);
  const Mat<Scalar> syy = joint.cov.block(ty.offset, ty.offset, ty.size, ty.size);
  require(ridge_scale >= Scalar(0), "condition_gaussian: negative ridge scale");
  const Scalar ridge = ridge_scale * sxx.trace() / Scalar(tx.size);
  sxx.diagonal().array() += ridge;

  Eigen::LLT<Mat<Scalar>> llt(sxx);
  if (llt.info() != Eigen::Success || (ridge_scale > Scalar(0) && !(ridge > Scalar(0))))
    throw SingularMatrix("condition_gaussian: covariance of block '" + observed_block +
                         "' is singular after regularization");

  const Vec<Scalar> resid = observation - joint.mean.segment(tx.offset, tx.size);
  ConditionalGaussian<Scalar> out;
  out.mean = joint.mean.segment(ty.offset, ty.size) + syx * llt.solve(resid);
  out.cov = syy - syx * llt.solve(syx.transpose());
  out.cov = Scalar(0.5) * (out.cov + out.cov.transpose());
  return out;
}

/// Joint law of target = eps^(s) - x0^(s) and an observation of the noised
/// draw, built from the generative map x0 = mu + U Lambda^{1/2} z with latent
/// (z, eps) ~ N(0, I_2d). With `restricted_rank` unset the observation is the
/// full x_t = (1-t) x0 + t eps. With a rank r it is the restricted observation
/// that keeps x0's high band (eigen-directions > r) only inside patch s.
/// Block names: "target", "observation".
template <typename Scalar>
JointGaussian<Scalar> build_patch_flow_joint(const CovarianceModel<Scalar>& model, const PatchScheme& scheme, Index s,
                                             Scalar t, std::optional<Index> restricted_rank = std::nullopt) {
  const Index d = model.dim();
  const Mat<Scalar> sel = scheme.selection<Scalar>(s);
  const Mat<Scalar> factor = model.eigenbasis * model.eigenvalues.cwiseSqrt().asDiagonal();
  const Mat<Scalar> eye = Mat<Scalar>::Identity(d, d);

  Mat<Scalar> data_map = factor;  // how z enters the observation (before the (1-t) factor)
  if (restricted_rank) {
    const Index r = *restricted_rank;
    data_map.rightCols(d - r) = scheme.projector<Scalar>(s) * factor.rightCols(d - r);
  }

  typename JointGaussian<Scalar>::LinearView target{"target", Mat<Scalar>(scheme.patch_dim, 2 * d), -(sel * model.mean)};
  target.map << -(sel * factor), sel;
  typename JointGaussian<Scalar>::LinearView obs{"observation", Mat<Scalar>(d, 2 * d), (Scalar(1) - t) * model.mean};
  obs.map << (Scalar(1) - t) * data_map, t * eye;

  return JointGaussian<Scalar>::from_linear_views(Vec<Scalar>::Zero(2 * d), Mat<Scalar>::Identity(2 * d, 2 * d),
                                                  {target, obs});
}

}  // namespace dip
