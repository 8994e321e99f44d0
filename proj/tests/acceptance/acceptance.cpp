// Acceptance checks. One line per criterion: "PASS <name>: detail" or
// "FAIL <name>: detail". An optional argument selects a single criterion.

#include <dip/exp/commands.hpp>
#include <dip/exp/config.hpp>
#include <dip/exp/theory_suite.hpp>
#include <dip/flow.hpp>
#include <dip/io.hpp>
#include <dip/model.hpp>
#include <dip/nn/checkpoint.hpp>
#include <dip/nn/gradcheck.hpp>
#include <dip/nn/ops.hpp>
#include <dip/nn/optim.hpp>
#include <dip/theory.hpp>

#include "support/op_suite.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

using namespace dip;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream out;
  out.precision(6);
  (out << ... << args);
  return out.str();
}

const std::vector<double> kTimes{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

Outcome check_oracle_equivalence() {
  const Stopwatch clock;
  const exp::TheorySection cfg;
  const auto suite = exp::run_theory_suite(cfg, 0);
  const auto& p = suite.property("oracle_equivalence");
  const double seconds = clock.seconds();
  const bool ok = p.passed && p.worst <= 1e-8 && cfg.cases >= 200 && seconds < 60.0;
  return {ok, str(cfg.cases, " cases, worst relative error ", p.worst, ", suite ", seconds, " s",
                  p.passed ? "" : ", " + p.failure)};
}

Outcome check_spectral_expansion() {
  const auto suite = exp::run_theory_suite(exp::TheorySection{}, 0);
  const auto& p = suite.property("spectral_expansion");
  return {p.passed, p.passed ? "residual and I1 decrease over alpha {1.5, 2, 3, 4} at d=32, t=0.5" : p.failure};
}

Outcome check_gain_monotonicity() {
  Index violations = 0;
  double closest = -1e300;
  for (double t : kTimes) {
    double prev = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double lambda = std::pow(10.0, -4.0 + 8.0 * i / 99.0);
      const double g = gain_coefficient(lambda, t);
      if (i > 0) {
        if (!(g < prev)) ++violations;
        closest = std::max(closest, g - prev);
      }
      prev = g;
    }
  }
  return {violations == 0, str("9 x 100 grid, ", violations, " non-decreasing steps, largest step ", closest)};
}

Outcome check_information_ordering() {
  const Index d = 16, draws = 100'000;
  const auto model = build_covariance<double>(d, 2.0, 1.0, BasisKind::dct);
  const auto split = split_frequencies(model, threshold_for_quantile(model, 0.25));
  const auto scheme = build_patch_scheme(d, 4, PatchLayout::contiguous);
  const MatrixXd x0 = sample_data(model, draws, 0x1f0);
  const std::uint64_t seed = 0x1f1;

  const auto dip = fm_loss_with_information([&](const FlowDraw& f) {
    std::vector<VectorXd> parts;
    for (Index s = 0; s < scheme.num_patches(); ++s) parts.push_back(dip_velocity(model, scheme, s, f.t, f.x_t));
    return scheme.assemble(parts);
  }, x0, seed);
  const auto dit = fm_loss_with_information([&](const FlowDraw& f) {
    std::vector<VectorXd> parts;
    for (Index s = 0; s < scheme.num_patches(); ++s) {
      const auto obs = build_restricted_observation(model, split, scheme, s, f.t, f.x0, f.eps);
      parts.push_back(dit_velocity(model, split, scheme, s, f.t, obs.x_hat));
    }
    return scheme.assemble(parts);
  }, x0, seed);
  const auto zero = fm_loss_with_information([&](const FlowDraw& f) { return VectorXd(VectorXd::Zero(f.x_t.size())); },
                                             x0, seed);

  // Gap standard errors combine the two estimates' errors without pairing.
  const double se_a = std::hypot(dip.std_error, dit.std_error);
  const double se_b = std::hypot(dit.std_error, zero.std_error);
  const double gap_a = dit.mean - dip.mean, gap_b = zero.mean - dit.mean;
  const bool ok = gap_a > 3 * se_a && gap_b > 3 * se_b;

  // Exact expectations by conditioning, midpoint rule over t.
  double exact_dip = 0.0, exact_dit = 0.0;
  const int nodes = 1000;
  for (int k = 0; k < nodes; ++k) {
    const double t = (k + 0.5) / nodes;
    for (Index s = 0; s < scheme.num_patches(); ++s) {
      for (auto [rank, acc] : {std::pair<std::optional<Index>, double*>{std::nullopt, &exact_dip}, {split.rank, &exact_dit}}) {
        const auto joint = build_patch_flow_joint(model, scheme, s, t, rank);
        const auto& ob = joint.block("observation");
        *acc += condition_gaussian(joint, "target", "observation", VectorXd(joint.mean.segment(ob.offset, ob.size)), 0.0)
                    .cov.trace() / nodes;
      }
    }
  }
  return {ok, str("dip ", dip.mean, " <= dit ", dit.mean, " <= zero ", zero.mean, " on ", draws, " draws; gaps ", gap_a,
                  " (", gap_a / se_a, " SE), ", gap_b, " (", gap_b / se_b, " SE); exact dip ", exact_dip, ", dit ",
                  exact_dit)};
}

// Patchwise DiP oracle. Operators are built once per distinct time in a
// call since the Euler sampler evaluates a whole batch at one t.
class DipOracleVelocity final : public VelocityModel {
 public:
  DipOracleVelocity(const CovarianceModel<double>& model, PatchScheme scheme)
      : model_(model), scheme_(std::move(scheme)) {}
  Index dim() const override { return model_.dim(); }
  MatrixXd velocity(const MatrixXd& x, std::span<const double> t, std::span<const int>) const override {
    MatrixXd v(x.rows(), x.cols());
    std::map<double, std::vector<MatrixXd>> ops;
    for (Index r = 0; r < x.rows(); ++r) {
      const double tr = t[static_cast<std::size_t>(r)];
      const VectorXd row = x.row(r).transpose();
      std::vector<VectorXd> parts;
      if (tr == 0.0 || tr == 1.0) {
        for (Index s = 0; s < scheme_.num_patches(); ++s) parts.push_back(dip_velocity(model_, scheme_, s, tr, row));
      } else {
        auto [it, fresh] = ops.try_emplace(tr);
        if (fresh)
          for (Index s = 0; s < scheme_.num_patches(); ++s)
            it->second.push_back(dip_operator(model_, scheme_, s, tr).projected);
        const VectorXd centered = row - (1.0 - tr) * model_.mean;
        for (Index s = 0; s < scheme_.num_patches(); ++s)
          parts.push_back(it->second[static_cast<std::size_t>(s)] * centered - scheme_.gather(model_.mean, s));
      }
      v.row(r) = scheme_.assemble(parts).transpose();
    }
    return v;
  }

 private:
  const CovarianceModel<double>& model_;
  PatchScheme scheme_;
};

Outcome check_exact_velocity_sampling() {
  const Index d = 16, samples = 10'000;
  auto model = build_covariance<double>(d, 2.0, 1.0, BasisKind::random_orthogonal, 0x2a0);
  RandomStream rng(0x2a1);
  for (auto& m : model.mean) m = 0.5 * rng.normal();
  const DipOracleVelocity oracle(model, build_patch_scheme(d, 4, PatchLayout::contiguous));
  const double budget = 0.05 * model.trace();
  std::vector<double> fd;
  for (int steps : {25, 100, 400}) {
    const MatrixXd x = euler_sample(oracle, samples, {}, {steps, 0x2a2}, std::nullopt);
    const auto [mean, cov] = empirical_moments(x);
    fd.push_back(gaussian_frechet<double>(mean, cov, model.mean, model.covariance()));
  }
  const bool ok = fd[2] < budget && fd[1] <= fd[0] && fd[2] <= fd[1];
  return {ok, str("FD at 25/100/400 steps: ", fd[0], " / ", fd[1], " / ", fd[2], "; bound 0.05 tr(Sigma) = ", budget)};
}

DipConfig tiny_config() {
  DipConfig c;
  c.scheme = {8, 8, 3, 4};
  c.backbone = {2, 16, 2, 3, 8, 2, Conditioning::adaln_zero};
  c.head = DetailerHeadConfig{DetailerVariant::conv_unet, {4, 8}, 12, 6};
  return c;
}

MatrixXd gaussian_rows(Index rows, Index cols, std::uint64_t seed) {
  RandomStream rng(seed);
  MatrixXd m(rows, cols);
  for (auto& v : m.reshaped()) v = rng.normal();
  return m;
}

nn::Var rows_constant(const MatrixXd& m) {
  const RowMatrixXd r = m;
  return nn::constant({{m.rows(), m.cols()}, Eigen::Map<const VectorXd>(r.data(), r.size())});
}

Outcome check_gradient_correctness() {
  const Stopwatch clock;
  Index failed = 0, ops = 0;
  double worst_op = 0.0;
  std::string names;
  for (const auto& r : testing::run_op_gradient_suite(0)) {
    ++ops;
    worst_op = std::max(worst_op, r.max_relative_error);
    if (!r.passed) {
      ++failed;
      names += " " + r.name;
    }
  }

  DipModel model(tiny_config(), 31);
  RandomStream rng(31, 0xabc);
  for (const auto& p : model.parameters().entries()) {
    nn::Var v = p.var;
    for (auto& x : v.mutable_value()) x = 0.4 * rng.normal();
  }
  const MatrixXd x = gaussian_rows(2, 192, 32);
  const nn::Var target = rows_constant(gaussian_rows(2, 192, 33));
  const std::vector<double> t{0.3, 0.7};
  const std::vector<int> labels{2, -1};
  std::vector<nn::Var> params;
  for (const auto& p : model.parameters().entries()) params.push_back(p.var);
  nn::GradCheckOptions opt;
  opt.tolerance = 1e-2;
  opt.max_coordinates = 32;
  opt.seed = 31;
  const auto e2e = nn::gradient_check("dip", params, [&] { return nn::mse(model.forward(x, t, labels), target); }, opt);
  const double seconds = clock.seconds();
  const bool ok = failed == 0 && e2e.passed && seconds < 120.0;
  return {ok, str(ops - failed, "/", ops, " ops within 1e-3 (worst ", worst_op, ")", names, "; end-to-end ",
                  e2e.max_relative_error, " vs 1e-2; ", seconds, " s")};
}

Outcome check_structural_identities() {
  std::vector<std::string> broken;

  const ImagePatchScheme scheme{8, 12, 3, 4};
  const VectorXd image = gaussian_rows(1, scheme.pixels(), 41).row(0).transpose();
  if (unpatchify(patchify(image, scheme), scheme) != image) broken.push_back("patchify bijection");

  const MatrixXd x0 = gaussian_rows(3, 5, 42), eps = gaussian_rows(3, 5, 43);
  if (interpolate(x0, eps, 0.0).x != x0 || interpolate(x0, eps, 1.0).x != eps) broken.push_back("interpolate endpoints");

  nn::ParameterStore store;
  store.add("p", {{1}, VectorXd::Ones(1)});
  nn::Ema ema(store, 0.9999);
  ema.shadow()[0].setZero();
  double ema_err = 0.0;
  for (int n = 1; n <= 1000; ++n) {
    ema.update(store);
    ema_err = std::max(ema_err, std::abs((1.0 - ema.shadow()[0](0)) - std::pow(0.9999, n)));
  }
  if (ema_err > 1e-12) broken.push_back(str("EMA recursion (", ema_err, ")"));

  DipModel trained(tiny_config(), 44);
  {
    RandomStream rng(44, 1);
    for (const auto& p : trained.parameters().entries()) {
      nn::Var v = p.var;
      for (auto& x : v.mutable_value()) x = 0.1 * rng.normal();
    }
  }
  const DipVelocity velocity(trained);
  const MatrixXd x = gaussian_rows(2, 192, 45);
  const std::vector<int> labels{0, 1};
  GuidanceConfig g;
  g.scale = 2.0;
  const MatrixXd cond = velocity.velocity(x, std::vector<double>(2, 0.5), labels);
  bool gating = true;
  for (double t : {0.0, 0.05, 0.10999, 0.97001, 1.0})
    gating = gating && guided_velocity(velocity, x, t, labels, g) ==
                           velocity.velocity(x, std::vector<double>(2, t), labels);
  const MatrixXd uncond = velocity.velocity(x, std::vector<double>(2, 0.5), std::vector<int>(2, g.null_label));
  const MatrixXd inside = guided_velocity(velocity, x, 0.5, labels, g);
  gating = gating && inside == MatrixXd(uncond + 2.0 * (cond - uncond));
  g.scale = 1.0;
  gating = gating && guided_velocity(velocity, x, 0.5, labels, g) == cond;
  if (!gating) broken.push_back("CFG interval gating");

  nn::AdamW opt(trained.parameters());
  nn::Ema shadow(trained.parameters());
  for (int step = 0; step < 2; ++step) {
    trained.parameters().zero_grad();
    nn::backward(nn::mse(trained.forward(x, std::vector<double>{0.2, 0.6}, labels), rows_constant(gaussian_rows(2, 192, 46 + step))));
    opt.step(trained.parameters());
    shadow.update(trained.parameters());
  }
  const std::string bytes = nn::encode_checkpoint(nn::capture(trained.parameters(), &opt, &shadow, 44, 2));
  const fs::path path = fs::temp_directory_path() / "dip_acceptance_ckpt.bin";
  nn::save_checkpoint(path, nn::decode_checkpoint(bytes));
  const nn::Checkpoint loaded = nn::load_checkpoint(path);
  fs::remove(path);
  DipModel restored(tiny_config(), 99);
  nn::AdamW opt2(restored.parameters());
  nn::Ema shadow2(restored.parameters());
  nn::restore_parameters(loaded, restored.parameters());
  nn::restore_optimizer(loaded, opt2);
  nn::restore_ema(loaded, shadow2);
  if (nn::encode_checkpoint(loaded) != bytes ||
      nn::encode_checkpoint(nn::capture(restored.parameters(), &opt2, &shadow2, 44, 2)) != bytes)
    broken.push_back("checkpoint round trip");

  std::string detail = "patchify, interpolate endpoints, EMA 1-0.9999^n, CFG gating, checkpoint bytes";
  if (!broken.empty()) {
    detail = "broken:";
    for (const auto& b : broken) detail += " " + b + ";";
  }
  return {broken.empty(), detail};
}

Outcome check_directional_claims() {
  const Stopwatch clock;
  const fs::path root = fs::temp_directory_path() / "dip_acceptance_directional";
  fs::remove_all(root);
  std::string detail;
  bool toy_ok = true, overfit_ok = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto toy = exp::load_config(DIP_CONFIG_DIR "/toy_manifold.json");
    toy.seed = seed;
    toy.output_dir = (root / ("toy_" + std::to_string(seed))).string();
    const auto t = exp::run_experiment(toy);
    const double patch = t.metric("hf_error.patch").value, img = t.metric("hf_error.image").value;
    toy_ok = toy_ok && patch < img;
    detail += str("toy seed ", seed, " hf ", patch, " vs ", img, "; ");
  }
  for (std::uint64_t seed : {0, 1, 2}) {
    auto of = exp::load_config(DIP_CONFIG_DIR "/overfit_image.json");
    of.seed = seed;
    of.output_dir = (root / ("overfit_" + std::to_string(seed))).string();
    const auto r = exp::run_experiment(of);
    const double det = r.metric("psnr_probe.detailer").value, base = r.metric("psnr_probe.backbone").value;
    overfit_ok = overfit_ok && det > base;
    detail += str("overfit seed ", seed, " psnr ", det, " vs ", base, " dB; ");
  }
  const double seconds = clock.seconds();
  fs::remove_all(root);
  return {toy_ok && overfit_ok && seconds < 1800.0, detail + str(seconds, " s")};
}

Outcome check_parameter_ratio() {
  const DipConfig dip = reference_scale_config();
  DipConfig baseline = dip;
  baseline.head.reset();
  const auto with_head = count_parameters(dip);
  const auto without = count_parameters(baseline);
  const double ratio = 100.0 * static_cast<double>(with_head.head) / static_cast<double>(with_head.total());
  const bool ok = std::abs(ratio - 0.3) <= 0.2;
  return {ok, str("backbone-only ", without.total(), ", with detailer ", with_head.total(), ", head ", with_head.head,
                  " = ", ratio, "% of total (target 0.3 +/- 0.2)")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle_equivalence", &check_oracle_equivalence},
      {"spectral_expansion", &check_spectral_expansion},
      {"gain_monotonicity", &check_gain_monotonicity},
      {"information_ordering", &check_information_ordering},
      {"exact_velocity_sampling", &check_exact_velocity_sampling},
      {"gradient_correctness", &check_gradient_correctness},
      {"structural_identities", &check_structural_identities},
      {"directional_claims", &check_directional_claims},
      {"parameter_ratio", &check_parameter_ratio},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  bool all = true, matched = false;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && only != name) continue;
    matched = true;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    all = all && o.passed;
  }
  if (!matched) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return all ? 0 : 1;
}
