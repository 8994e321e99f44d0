#include <dip/theory.hpp>

#include <doctest.h>

#include <cmath>

using namespace dip;

namespace {

double rel_err(const VectorXd& a, const VectorXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

VectorXd normals(RandomStream& rng, Index n) {
  VectorXd v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct RandomCase {
  CovarianceModel<double> model;
  PatchScheme scheme;
  Index patch;
  double t;
};

RandomCase random_case(std::uint64_t seed) {
  RandomStream rng(seed, 17);
  const Index patch_dims[] = {1, 2, 4};
  const Index p = patch_dims[rng.below(3)];
  const Index d = p * (1 + static_cast<Index>(rng.below(16 / p)));
  const double alphas[] = {1.5, 2.0, 3.0, 4.0};
  auto model = build_covariance<double>(d, alphas[rng.below(4)], 0.5 + rng.uniform(), BasisKind::random_orthogonal,
                                        seed * 31 + 7);
  model.mean = normals(rng, d);
  PatchScheme scheme;
  switch (rng.below(3)) {
    case 0: scheme = build_patch_scheme(d, p, PatchLayout::contiguous); break;
    case 1: scheme = build_patch_scheme(d, p, PatchLayout::strided); break;
    default: scheme = build_permuted_patch_scheme(d, p, seed); break;
  }
  const auto patch = static_cast<Index>(rng.below(static_cast<std::uint64_t>(scheme.num_patches())));
  const double t = 0.1 * static_cast<double>(1 + rng.below(9));
  return {model, scheme, patch, t};
}

}  // namespace

TEST_CASE("gain_coefficient values") {
  CHECK(gain_coefficient(1.0, 0.5) == 0.0);
  CHECK(gain_coefficient(1.0, 1.0) == 1.0);
  CHECK(gain_coefficient(1.0, 1.0 - 1e-9) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("gain_coefficient derivative matches central differences") {
  const double lam = 0.3, t = 0.4, h = 1e-5;
  const double fd = (gain_coefficient(lam + h, t) - gain_coefficient(lam - h, t)) / (2 * h);
  const double sym = gain_coefficient_derivative(lam, t);
  CHECK(sym < 0);
  CHECK(std::abs(fd - sym) < 1e-6 * std::max(1.0, std::abs(sym)));
}

TEST_CASE("gain_coefficient strictly decreasing in lambda") {
  for (int k = 1; k <= 9; ++k) {
    const double t = 0.1 * k;
    double prev = gain_coefficient(1e-4, t);
    for (int i = 1; i < 100; ++i) {
      const double lam = 1e-4 * std::pow(1e8, i / 99.0);
      const double g = gain_coefficient(lam, t);
      CHECK(g < prev);
      prev = g;
    }
  }
}

TEST_CASE("dip_velocity simple cases") {
  const auto model = build_covariance<double>(4, 2.0, 1.0, BasisKind::identity);
  auto unit = model;
  unit.eigenvalues.setOnes();
  const auto scheme = build_patch_scheme(4, 2, PatchLayout::contiguous);
  RandomStream rng(3);
  const VectorXd x = normals(rng, 4);
  CHECK(dip_velocity(unit, scheme, 1, 0.5, x).norm() < 1e-15);
  CHECK(dip_velocity(unit, scheme, 1, 1.0, x) == scheme.gather(x, 1));
  CHECK(dip_velocity(unit, scheme, 0, 1.0 - 1e-9, x).isApprox(scheme.gather(x, 0), 1e-6));
  CHECK(dip_velocity(model, scheme, 0, 0.0, x) == -scheme.gather(x, 0));
  CHECK(dip_velocity(model, scheme, 0, 1e-9, x).isApprox(-scheme.gather(x, 0), 1e-6));
  CHECK_THROWS_AS(dip_velocity(model, scheme, 0, 1.5, x), DomainError);
  CHECK_THROWS_AS(dip_velocity(model, scheme, 0, -0.1, x), DomainError);
  CHECK_THROWS_AS(dip_operator(model, scheme, 0, 0.0), DomainError);
  CHECK_THROWS_AS(dip_velocity(model, scheme, 0, 0.5, VectorXd(3)), ShapeMismatch);
}

TEST_CASE("dip operator structure") {
  const auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::random_orthogonal, 4);
  const auto scheme = build_patch_scheme(8, 2, PatchLayout::strided);
  const auto op = dip_operator(model, scheme, 1, 0.3);
  const MatrixXd am = op.gain_matrix * op.m_matrix;
  CHECK((op.m_matrix - op.m_matrix.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((am - am.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  // Full-band gain: P A M u_i = g(lambda_i, t) v_i exactly.
  for (Index i = 0; i < 8; ++i) {
    const VectorXd vi = scheme.selection(1) * model.eigenbasis.col(i);
    const VectorXd action = op.projected * model.eigenbasis.col(i);
    CHECK((action - gain_coefficient(model.eigenvalues(i), 0.3) * vi).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("dip_velocity matches the conditioning oracle (8-dim, t=0.3)") {
  auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::random_orthogonal, 21);
  RandomStream rng(5);
  model.mean = normals(rng, 8);
  const auto scheme = build_patch_scheme(8, 2, PatchLayout::contiguous);
  for (Index s = 0; s < scheme.num_patches(); ++s) {
    const VectorXd x = normals(rng, 8);
    const auto joint = build_patch_flow_joint(model, scheme, s, 0.3);
    const auto oracle = condition_gaussian<double>(joint, "target", "observation", x);
    CHECK(rel_err(dip_velocity(model, scheme, s, 0.3, x), oracle.mean) < 1e-8);
  }
}

TEST_CASE("dit_velocity matches the conditioning oracle (8-dim, r=3, t=0.4)") {
  auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::random_orthogonal, 22);
  RandomStream rng(6);
  model.mean = normals(rng, 8);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 3.0 / 8.0));
  REQUIRE(split.rank == 3);
  const auto scheme = build_patch_scheme(8, 4, PatchLayout::strided);
  for (Index s = 0; s < scheme.num_patches(); ++s) {
    const auto obs = build_restricted_observation(model, split, scheme, s, 0.4, VectorXd(sample_data(model, 1, s).row(0).transpose()),
                                                  normals(rng, 8));
    const auto joint = build_patch_flow_joint(model, scheme, s, 0.4, std::optional<Index>(split.rank));
    const auto oracle = condition_gaussian<double>(joint, "target", "observation", obs.x_hat);
    CHECK(rel_err(dit_velocity(model, split, scheme, s, 0.4, obs.x_hat), oracle.mean) < 1e-8);
  }
}

TEST_CASE("oracle equivalence over 200 random cases") {
  double worst_dip = 0, worst_dit = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto c = random_case(seed);
    RandomStream rng(seed, 99);
    const Index d = c.model.dim();
    const VectorXd x0 = sample_data(c.model, 1, seed).row(0).transpose();
    const VectorXd eps = normals(rng, d);
    const VectorXd x_t = (1 - c.t) * x0 + c.t * eps;

    const auto dip_joint = build_patch_flow_joint(c.model, c.scheme, c.patch, c.t);
    const auto dip_oracle = condition_gaussian<double>(dip_joint, "target", "observation", x_t);
    worst_dip = std::max(worst_dip, rel_err(dip_velocity(c.model, c.scheme, c.patch, c.t, x_t), dip_oracle.mean));

    const auto split = split_frequencies(c.model, threshold_for_quantile(c.model, rng.uniform()));
    const auto obs = build_restricted_observation(c.model, split, c.scheme, c.patch, c.t, x0, eps);
    const auto dit_joint = build_patch_flow_joint(c.model, c.scheme, c.patch, c.t, std::optional<Index>(split.rank));
    const auto dit_oracle = condition_gaussian<double>(dit_joint, "target", "observation", obs.x_hat);
    worst_dit = std::max(worst_dit, rel_err(dit_velocity(c.model, split, c.scheme, c.patch, c.t, obs.x_hat), dit_oracle.mean));
  }
  MESSAGE("worst relative error dip=" << worst_dip << " dit=" << worst_dit);
  CHECK(worst_dip < 1e-8);
  CHECK(worst_dit < 1e-8);
}

TEST_CASE("dit reduces to dip without a high band or with a single patch") {
  auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::random_orthogonal, 8);
  RandomStream rng(8);
  model.mean = normals(rng, 8);
  const auto full = split_frequencies(model, model.eigenvalues(7) / 2);
  REQUIRE(full.rank == 8);
  const auto scheme = build_patch_scheme(8, 2, PatchLayout::contiguous);
  const auto single = build_patch_scheme(8, 8, PatchLayout::contiguous);
  const auto partial = split_frequencies(model, threshold_for_quantile(model, 0.5));
  for (double t : {0.1, 0.5, 0.9}) {
    const VectorXd x = normals(rng, 8);
    for (Index s = 0; s < 4; ++s)
      CHECK((dit_velocity(model, full, scheme, s, t, x) - dip_velocity(model, scheme, s, t, x)).norm() < 1e-10);
    CHECK((dit_velocity(model, partial, single, 0, t, x) - dip_velocity(model, single, 0, t, x)).norm() < 1e-10);
  }
}

TEST_CASE("restricted observation invariants") {
  auto model = build_covariance<double>(12, 2.0, 1.0, BasisKind::random_orthogonal, 12);
  RandomStream rng(12);
  model.mean = normals(rng, 12);
  const auto scheme = build_permuted_patch_scheme(12, 3, 2);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));

  SUBCASE("no high band gives x_t exactly") {
    const auto full = split_frequencies(model, model.eigenvalues(11) / 2);
    const VectorXd x0 = normals(rng, 12), eps = normals(rng, 12);
    const auto obs = build_restricted_observation(model, full, scheme, 1, 0.3, x0, eps);
    CHECK(obs.x_hat == VectorXd(0.7 * x0 + 0.3 * eps));
  }
  SUBCASE("own patch is the full noisy patch") {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const VectorXd x0 = normals(rng, 12), eps = normals(rng, 12);
      const double t = rng.uniform();
      const Index s = static_cast<Index>(rng.below(4));
      const auto obs = build_restricted_observation(model, split, scheme, s, t, x0, eps);
      const VectorXd x_t = (1 - t) * x0 + t * eps;
      worst = std::max(worst, (scheme.gather(obs.x_hat, s) - scheme.gather(x_t, s)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("other patches carry only the low band") {
    // Reconstruct x_hat from its components: (1-t)(mu + low) + t eps on
    // patches l != s, (1-t) x0 + t eps on patch s.
    const VectorXd x0 = normals(rng, 12), eps = normals(rng, 12);
    const double t = 0.35;
    const Index s = 2;
    const auto obs = build_restricted_observation(model, split, scheme, s, t, x0, eps);
    const MatrixXd ur = model.eigenbasis.leftCols(split.rank);
    const VectorXd low = ur * ur.transpose() * (x0 - model.mean);
    for (Index l = 0; l < scheme.num_patches(); ++l) {
      const VectorXd expected = l == s ? VectorXd(scheme.gather(VectorXd((1 - t) * x0 + t * eps), l))
                                       : VectorXd(scheme.gather(VectorXd((1 - t) * (model.mean + low) + t * eps), l));
      CHECK((scheme.gather(obs.x_hat, l) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("spectral expansion") {
  SUBCASE("aligned identity basis has no mixed terms") {
    const auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::identity);
    const auto scheme = build_patch_scheme(8, 2, PatchLayout::contiguous);
    const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
    for (Index s = 0; s < 4; ++s) {
      const auto ex = spectral_expansion(model, split, scheme, s, 0.5);
      CHECK(ex.i1_term.cwiseAbs().maxCoeff() == 0.0);
      // I2 collapses to its diagonal i == j terms on patch-s coordinates.
      for (Index i = split.rank; i < 8; ++i) {
        const bool inside = std::find(scheme.index_map[s].begin(), scheme.index_map[s].end(), i) != scheme.index_map[s].end();
        if (!inside) CHECK(ex.i2_term.col(i).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
  SUBCASE("low-band coefficient at lambda=1, t=0.5") {
    const auto model = build_covariance<double>(4, 2.0, 1.0, BasisKind::identity);
    const auto split = split_frequencies(model, 0.2);
    const auto ex = spectral_expansion(model, split, build_patch_scheme(4, 2, PatchLayout::contiguous), 0, 0.5);
    REQUIRE(ex.leading_low.size() == 2);
    CHECK(ex.leading_low[0].second == 0.0);
    CHECK(ex.leading_high.size() == 2);
    CHECK(ex.leading_high[0].second == 2.0);
  }
  SUBCASE("proof intermediates reassemble the exact operator") {
    const auto model = build_covariance<double>(12, 2.0, 1.0, BasisKind::random_orthogonal, 3);
    const auto scheme = build_patch_scheme(12, 3, PatchLayout::contiguous);
    const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
    const auto ex = spectral_expansion(model, split, scheme, 1, 0.6);
    const MatrixXd exact = scheme.selection(1) * (ex.c1 + ex.c2) * (ex.d + ex.e).inverse();
    CHECK((exact - ex.exact).cwiseAbs().maxCoeff() < 1e-10);
    // D is diagonal in the eigenbasis with positive entries.
    const MatrixXd dd = model.eigenbasis.transpose() * ex.d * model.eigenbasis;
    CHECK((dd - MatrixXd(dd.diagonal().asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(dd.diagonal().minCoeff() > 0);
    // First-order expansion equals P (C1 + C2) D^{-1}.
    CHECK((scheme.selection(1) * (ex.c1 + ex.c2) * ex.d.inverse() - ex.approximation).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("residual and I1 shrink as the spectrum decays faster") {
    const auto scheme = build_patch_scheme(32, 8, PatchLayout::contiguous);
    double prev_res = 1e300, prev_i1 = 1e300, res_15 = 0, res_4 = 0;
    for (double alpha : {1.5, 2.0, 3.0, 4.0}) {
      const auto model = build_covariance<double>(32, alpha, 1.0, BasisKind::random_orthogonal, 0);
      const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
      const auto ex = spectral_expansion(model, split, scheme, 0, 0.5);
      CHECK(ex.residual_norm < prev_res);
      CHECK(ex.i1_term.norm() < prev_i1);
      prev_res = ex.residual_norm;
      prev_i1 = ex.i1_term.norm();
      if (alpha == 1.5) res_15 = ex.residual_norm;
      if (alpha == 4.0) res_4 = ex.residual_norm;
    }
    CHECK(res_4 < res_15);
  }
  SUBCASE("published high-band coefficient does not approximate the operator") {
    const auto scheme = build_patch_scheme(32, 8, PatchLayout::contiguous);
    const auto model = build_covariance<double>(32, 4.0, 1.0, BasisKind::random_orthogonal, 0);
    const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
    const auto first = spectral_expansion(model, split, scheme, 0, 0.5);
    const auto published = spectral_expansion(model, split, scheme, 0, 0.5, HighBandCoefficient::published);
    CHECK(published.residual_norm > 100 * first.residual_norm);
  }
  SUBCASE("degenerate bands") {
    const auto model = build_covariance<double>(6, 2.0, 1.0, BasisKind::random_orthogonal, 1);
    const auto scheme = build_patch_scheme(6, 3, PatchLayout::contiguous);
    const auto none = spectral_expansion(model, split_frequencies(model, 2.0), scheme, 0, 0.5);
    CHECK(none.leading_low.empty());
    CHECK(none.i1_term.norm() == 0.0);
    const auto all = spectral_expansion(model, split_frequencies(model, 1e-6), scheme, 0, 0.5);
    CHECK(all.leading_high.empty());
    CHECK(all.residual_norm < 1e-10);
  }
}

TEST_CASE("alignment degeneracy: patch-supported eigenvectors see identical operators") {
  const auto model = build_covariance<double>(12, 2.0, 1.0, BasisKind::identity);
  const auto scheme = build_patch_scheme(12, 4, PatchLayout::contiguous);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
  for (Index s = 0; s < 3; ++s) {
    for (double t : {0.2, 0.5, 0.8}) {
      const auto dit = dit_operator(split, scheme, s, t);
      const auto dip = dip_operator(model, scheme, s, t);
      for (Index idx : scheme.index_map[s]) {
        const VectorXd u = model.eigenbasis.col(idx);
        CHECK(((dit.projected - dip.projected) * u).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("high-band data correction vanishes as t -> 1") {
  const auto model = build_covariance<double>(16, 2.0, 1.0, BasisKind::random_orthogonal, 5);
  const auto scheme = build_patch_scheme(16, 4, PatchLayout::contiguous);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
  const MatrixXd sel = scheme.selection(0);
  for (Index i = split.rank; i < 16; ++i) {
    std::vector<double> norms;
    for (double t : {0.5, 0.7, 0.9, 0.99}) {
      const auto op = dit_operator(split, scheme, 0, t);
      norms.push_back(((1 - t) * sel * op.b_matrix * op.m_matrix * model.eigenbasis.col(i)).norm());
    }
    for (std::size_t k = 1; k < norms.size(); ++k) CHECK(norms[k] < norms[k - 1]);
    CHECK(norms.back() < 0.05 * norms.front());
  }
}

TEST_CASE("dit operator corrupted M_hat breaks oracle equivalence") {
  auto model = build_covariance<double>(8, 2.0, 1.0, BasisKind::random_orthogonal, 30);
  const auto scheme = build_patch_scheme(8, 2, PatchLayout::contiguous);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
  RandomStream rng(30);
  const VectorXd x = normals(rng, 8);
  const auto joint = build_patch_flow_joint(model, scheme, 0, 0.5, std::optional<Index>(split.rank));
  const auto oracle = condition_gaussian<double>(joint, "target", "observation", x);
  CHECK(rel_err(dit_velocity(model, split, scheme, 0, 0.5, x, 1e-3), oracle.mean) > 1e-6);
}

TEST_CASE("long double operators agree with double") {
  const auto md = build_covariance<double>(6, 2.0, 1.0, BasisKind::dct);
  const auto ml = build_covariance<long double>(6, 2.0L, 1.0L, BasisKind::dct);
  const auto scheme = build_patch_scheme(6, 2, PatchLayout::strided);
  const MatrixXd a = dip_operator(md, scheme, 1, 0.3).projected;
  const Mat<long double> b = dip_operator(ml, scheme, 1, 0.3L).projected;
  CHECK((a - b.cast<double>()).cwiseAbs().maxCoeff() < 1e-13);
}
