#include "training.hpp"

#include <dip/exp/commands.hpp>
#include <dip/exp/toy_manifold.hpp>
#include <dip/nn/ops.hpp>

#include <chrono>
#include <filesystem>
#include <numbers>

namespace dip::exp {

using nn::Var;

namespace {

constexpr Index kTimeFeatures = 32;

// Projection onto the DCT coefficients below the high band.
MatrixXd low_pass(const MatrixXd& rows, Index band_start) {
  const MatrixXd c = dct_basis<double>(rows.cols()).leftCols(band_start);
  return rows * c * c.transpose();
}

struct Mlp {
  nn::Dense l1, l2, l3;
  Mlp(nn::ParameterStore& store, Index in, Index hidden, Index out, RandomStream& rng) {
    l1 = nn::make_dense(store, "fc1", in, hidden, rng);
    l2 = nn::make_dense(store, "fc2", hidden, hidden, rng);
    l3 = nn::make_dense(store, "fc3", hidden, out, rng, nn::Init::zero);
  }
  Var operator()(const Var& x) const { return l3(nn::silu(l2(nn::silu(l1(x))))); }
};

// Shared weights over non-overlapping windows: input is the noisy window, the
// low-pass context at the same positions and the time features.
class PatchNet {
 public:
  PatchNet(const ToyManifoldSpec& spec, RandomStream& rng)
      : spec_(spec), mlp_(store_, 2 * spec.window + kTimeFeatures, spec.patch_hidden, spec.window, rng) {}
  nn::ParameterStore& store() { return store_; }

  Var operator()(const MatrixXd& x_t, std::span<const double> t) const {
    const Index b = x_t.rows(), w = spec_.window, n = spec_.length / w;
    const MatrixXd ctx = low_pass(x_t, spec_.high_band_start());
    const RowMatrixXd tf = timestep_features(t, kTimeFeatures);
    RowMatrixXd in(b * n, 2 * w + kTimeFeatures);
    for (Index r = 0; r < b; ++r)
      for (Index j = 0; j < n; ++j) {
        auto row = in.row(r * n + j);
        row.segment(0, w) = x_t.row(r).segment(j * w, w);
        row.segment(w, w) = ctx.row(r).segment(j * w, w);
        row.segment(2 * w, kTimeFeatures) = tf.row(r);
      }
    const Var out = mlp_(nn::constant({{b * n, in.cols()}, Eigen::Map<const VectorXd>(in.data(), in.size())}));
    return nn::reshape(out, {b, spec_.length});
  }

 private:
  ToyManifoldSpec spec_;
  nn::ParameterStore store_;
  Mlp mlp_;
};

// The whole noisy curve and its low-pass context in one input row.
class ImageNet {
 public:
  ImageNet(const ToyManifoldSpec& spec, RandomStream& rng)
      : spec_(spec), mlp_(store_, 2 * spec.length + kTimeFeatures, spec.image_hidden, spec.length, rng) {}
  nn::ParameterStore& store() { return store_; }

  Var operator()(const MatrixXd& x_t, std::span<const double> t) const {
    const Index b = x_t.rows(), l = spec_.length;
    RowMatrixXd in(b, 2 * l + kTimeFeatures);
    in << x_t, low_pass(x_t, spec_.high_band_start()), timestep_features(t, kTimeFeatures);
    return mlp_(nn::constant({{b, in.cols()}, Eigen::Map<const VectorXd>(in.data(), in.size())}));
  }

 private:
  ToyManifoldSpec spec_;
  nn::ParameterStore store_;
  Mlp mlp_;
};

template <typename Net>
class NetVelocity final : public VelocityModel {
 public:
  NetVelocity(const Net& net, Index dim) : net_(net), dim_(dim) {}
  Index dim() const override { return dim_; }
  MatrixXd velocity(const MatrixXd& x, std::span<const double> t, std::span<const int>) const override {
    const Var v = net_(x, t);
    return Eigen::Map<const RowMatrixXd>(v.value().data(), x.rows(), x.cols());
  }

 private:
  const Net& net_;
  Index dim_;
};

struct ProbeResult {
  MatrixXd estimate;  // x0_hat rows
  double high = 0.0, low = 0.0;
};

// x0_hat = x_t - t v_hat at the probe time; band errors are per-curve means.
ProbeResult probe(const VelocityModel& model, const MatrixXd& x0, const MatrixXd& eps, double t, Index band_start) {
  const MatrixXd x_t = (1 - t) * x0 + t * eps;
  const std::vector<double> times(static_cast<std::size_t>(x0.rows()), t);
  ProbeResult r;
  r.estimate = x_t - t * model.velocity(x_t, times, {});
  const MatrixXd diff = r.estimate - x0;
  r.high = dct_band_energy(diff, band_start, x0.cols()).mean();
  r.low = dct_band_energy(diff, 0, band_start).mean();
  return r;
}

MatrixXd normal_matrix(Index rows, Index cols, std::uint64_t seed, std::uint64_t stream) {
  RandomStream rng(seed, stream);
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

MatrixXd generate_toy_curves(const ToyManifoldSpec& spec, Index count, std::uint64_t seed) {
  spec.validate();
  const double pi = std::numbers::pi;
  const Index l = spec.length;
  MatrixXd y(count, l);
  RandomStream rng(seed, 0x70a);
  const double spacing = static_cast<double>(l) / static_cast<double>(std::max<Index>(1, spec.branches));
  for (Index r = 0; r < count; ++r) {
    const double phase = 2 * pi * rng.uniform();
    for (Index n = 0; n < l; ++n)
      y(r, n) = spec.trunk_amplitude *
                std::sin(2 * pi * spec.trunk_frequency * static_cast<double>(n) / static_cast<double>(l) + phase);
    for (Index k = 0; k < spec.branches; ++k) {
      const double site = (static_cast<double>(k) + 0.5 + 0.5 * (rng.uniform() - 0.5)) * spacing;
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (Index n = 0; n < l; ++n) {
        const double u = static_cast<double>(n) - site;
        y(r, n) += sign * spec.branch_amplitude * std::exp(-u * u / (2 * spec.branch_width * spec.branch_width)) *
                   std::sin(2 * pi * spec.branch_multiplier * spec.trunk_frequency * u / static_cast<double>(l));
      }
    }
    for (Index n = 0; n < l; ++n) y(r, n) += spec.noise * rng.normal();
  }
  return y;
}

VectorXd dct_band_energy(const MatrixXd& rows, Index begin, Index end) {
  require(0 <= begin && begin <= end && end <= rows.cols(), "dct_band_energy: band outside [0, length]");
  const MatrixXd coeffs = rows * dct_basis<double>(rows.cols());
  return coeffs.middleCols(begin, end - begin).rowwise().squaredNorm();
}

RunReport cmd_toy_manifold(const ExperimentConfig& config) {
  const ToyManifoldSpec& spec = config.toy;
  spec.validate();
  const std::uint64_t seed = config.seed;
  const std::filesystem::path out = config.output_dir;
  const Index l = spec.length, band = spec.high_band_start();

  const MatrixXd train = generate_toy_curves(spec, spec.train_samples, derive_stream(seed, 1));
  const MatrixXd test = generate_toy_curves(spec, spec.test_samples, derive_stream(seed, 2));

  RandomStream init_patch(seed, 0x11), init_image(seed, 0x12);
  PatchNet patch(spec, init_patch);
  ImageNet image(spec, init_image);

  auto source = [&](Index step) {
    RandomStream rng(derive_stream(seed, 3), static_cast<std::uint64_t>(step));
    FlowBatch b;
    b.x0.resize(config.training.batch_size, l);
    for (Index r = 0; r < b.x0.rows(); ++r)
      b.x0.row(r) = train.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(train.rows()))));
    return b;
  };
  nn::AdamW patch_opt(patch.store(), adamw_config(config.training));
  nn::AdamW image_opt(image.store(), adamw_config(config.training));
  const auto patch_fit = train_flow(patch.store(), patch_opt, config.training, derive_stream(seed, 4), source,
                                    [&](const MatrixXd& x, std::span<const double> t, std::span<const int>) {
                                      return patch(x, t);
                                    });
  const auto image_fit = train_flow(image.store(), image_opt, config.training, derive_stream(seed, 4), source,
                                    [&](const MatrixXd& x, std::span<const double> t, std::span<const int>) {
                                      return image(x, t);
                                    });

  const NetVelocity<PatchNet> patch_v(patch, l);
  const NetVelocity<ImageNet> image_v(image, l);
  const MatrixXd eps = normal_matrix(test.rows(), l, seed, 5);
  const auto pp = probe(patch_v, test, eps, spec.probe_t, band);
  const auto ip = probe(image_v, test, eps, spec.probe_t, band);
  const double data_high = dct_band_energy(test, band, l).mean();

  RunReport report;
  report.add("hf_error.patch", pp.high, "mean over test curves of high-band DCT energy of x0_hat - x0 at probe t", test.rows());
  report.add("hf_error.image", ip.high, "mean over test curves of high-band DCT energy of x0_hat - x0 at probe t", test.rows());
  report.add("lf_error.patch", pp.low, "mean over test curves of low-band DCT energy of x0_hat - x0 at probe t", test.rows());
  report.add("lf_error.image", ip.low, "mean over test curves of low-band DCT energy of x0_hat - x0 at probe t", test.rows());
  report.add("hf_energy.data", data_high, "mean high-band DCT energy of the test curves", test.rows());
  report.add("final_loss.patch", patch_fit.losses.empty() ? 0.0 : patch_fit.losses.back(), "last training batch loss",
             config.training.batch_size);
  report.add("final_loss.image", image_fit.losses.empty() ? 0.0 : image_fit.losses.back(), "last training batch loss",
             config.training.batch_size);
  report.add("parameters.patch", static_cast<double>(patch.store().count()), "trainable parameter count", 1);
  report.add("parameters.image", static_cast<double>(image.store().count()), "trainable parameter count", 1);
  report.add("train_seconds.patch", patch_fit.seconds, "wall clock", 1);
  report.add("train_seconds.image", image_fit.seconds, "wall clock", 1);

  // Point clouds (x, y) for plotting: probe reconstructions and sampled curves.
  const Index shown = std::min(spec.plot_samples, test.rows());
  if (shown > 0) {
    CsvTable probes({"sample", "index", "x", "y_true", "y_patch", "y_image"});
    for (Index r = 0; r < shown; ++r)
      for (Index n = 0; n < l; ++n)
        probes.row({static_cast<long long>(r), static_cast<long long>(n), static_cast<double>(n) / static_cast<double>(l),
                    test(r, n), pp.estimate(r, n), ip.estimate(r, n)});
    probes.write(out / "toy_probe.csv");
    report.artifacts.push_back((out / "toy_probe.csv").string());

    const SamplerConfig sc{static_cast<int>(config.sampler.steps), derive_stream(seed, 6)};
    const MatrixXd gen_patch = euler_sample(patch_v, shown, {}, sc, std::nullopt);
    const MatrixXd gen_image = euler_sample(image_v, shown, {}, sc, std::nullopt);
    CsvTable gen({"input", "sample", "index", "x", "y"});
    for (const auto& [name, m] : {std::pair{"patch", &gen_patch}, std::pair{"image", &gen_image}})
      for (Index r = 0; r < shown; ++r)
        for (Index n = 0; n < l; ++n)
          gen.row({std::string(name), static_cast<long long>(r), static_cast<long long>(n),
                   static_cast<double>(n) / static_cast<double>(l), (*m)(r, n)});
    gen.write(out / "toy_generated.csv");
    report.artifacts.push_back((out / "toy_generated.csv").string());
  }

  CsvTable losses({"step", "loss_patch", "loss_image"});
  for (std::size_t i = 0; i < patch_fit.losses.size(); ++i)
    losses.row({static_cast<long long>(i), patch_fit.losses[i], image_fit.losses[i]});
  losses.write(out / "toy_losses.csv");
  report.artifacts.push_back((out / "toy_losses.csv").string());
  return report;
}

}  // namespace dip::exp
