#include <dip/exp/commands.hpp>
#include <dip/exp/image_io.hpp>
#include <dip/exp/theory_suite.hpp>
#include <dip/exp/toy_manifold.hpp>
#include <dip/io.hpp>

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <sstream>

using namespace dip;
using namespace dip::exp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dip_test_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_gaussian(const fs::path& out) {
  ExperimentConfig c = parse_config(R"({
    "experiment": "train-gaussian",
    "model": {"height": 4, "width": 4, "channels": 1, "patch": 2,
              "backbone": {"layers": 1, "hidden": 8, "heads": 2, "num_classes": 2, "time_frequencies": 8},
              "head": {"variant": "conv_unet", "channels": [4]}},
    "training": {"steps": 4, "batch_size": 4},
    "sampler": {"samples": 64, "steps": 10},
    "gaussian": {"classes": 2, "class_offset": 2.0}
  })");
  c.output_dir = out.string();
  return c;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("pixel mapping") {
  CHECK(pixel_to_value(0) == -1.0);
  CHECK(pixel_to_value(255) == 1.0);
  CHECK(pixel_to_value(127) == doctest::Approx(-0.00392156862745098).epsilon(1e-15));
  CHECK(pixel_to_value(127) == 127 / 127.5 - 1);
  CHECK(value_to_pixel(0.0) == 128);  // 127.5 rounds away from zero
  CHECK(value_to_pixel(-3.0) == 0);
  CHECK(value_to_pixel(7.0) == 255);
  for (unsigned p = 0; p < 256; ++p) CHECK(value_to_pixel(pixel_to_value(p)) == p);
}

TEST_CASE("image round trips are exact at 8-bit resolution") {
  const fs::path dir = scratch("images");
  RandomStream rng(4);
  Image img{5, 7, 3, VectorXd(5 * 7 * 3)};
  for (auto& v : img.values) v = pixel_to_value(static_cast<unsigned>(rng.below(256)));
  for (const char* name : {"a.png", "a.ppm", "A.PNG"}) {
    write_image(img, dir / name);
    const Image back = read_image(dir / name);
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK(back.values == img.values);
  }
  const Image black{2, 2, 3, VectorXd::Constant(12, -1.0)};
  write_image(black, dir / "black.png");
  CHECK(read_image(dir / "black.png").values == VectorXd::Constant(12, -1.0));

  CHECK_THROWS_AS(write_image(img, dir / "a.bmp"), InvalidParameter);
  CHECK_THROWS_AS(read_image(dir / "a.jpg"), InvalidParameter);
  atomic_write(dir / "corrupt.png", "not a png at all");
  CHECK_THROWS_AS(read_image(dir / "corrupt.png"), InvalidParameter);
  atomic_write(dir / "short.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(read_image(dir / "short.ppm"), InvalidParameter);
  atomic_write(dir / "ascii.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_image(dir / "ascii.ppm"), InvalidParameter);
  fs::remove_all(dir);
}

TEST_CASE("config parsing and schema validation") {
  const ExperimentConfig c = parse_config(R"({"experiment": "theory-check"})");
  CHECK(c.experiment == Experiment::theory_check);
  CHECK(c.sampler.steps == 100);
  CHECK(c.theory.cases == 200);
  CHECK(c.guidance.config.interval_lo == 0.11);
  CHECK(c.guidance.config.interval_hi == 0.97);
  REQUIRE(c.model.head);

  CHECK_THROWS_AS(parse_config(R"({"experiment": "nope"})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "sample", "extra": 1})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "sample", "sampler": {"steps": 0}})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "sample", "toy": {"branch_multiplier": 1.0}})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "sample", "guidance": {"interval": [0.9, 0.2]}})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config(R"({"experiment": "sample", "model": {"height": 30, "patch": 8}})"), InvalidParameter);
  CHECK_THROWS_AS(parse_config("{not json"), InvalidParameter);
  try {
    parse_config(R"({"experiment": "sample", "training": {"batch_size": "four"}})");
    FAIL("expected a schema violation");
  } catch (const InvalidParameter& e) {
    CHECK(std::string(e.what()).find("/training/batch_size") != std::string::npos);
  }

  const ExperimentConfig none = parse_config(R"({"experiment": "sample", "model": {"head": null}})");
  CHECK(!none.model.head);
  CHECK(parse_config(canonical_json(none)).model.head == std::nullopt);
}

TEST_CASE("canonical config round trip and hash sensitivity") {
  const ExperimentConfig base = parse_config(read_file(DIP_CONFIG_DIR "/overfit_image.json"));
  CHECK(canonical_json(parse_config(canonical_json(base))) == canonical_json(base));
  const std::string h = config_hash(base);
  CHECK(h.size() == 16);
  CHECK(config_hash(parse_config(canonical_json(base))) == h);

  std::vector<ExperimentConfig> variants(8, base);
  variants[0].seed = 1;
  variants[1].sampler.steps = 99;
  variants[2].model.backbone.layers = 3;
  variants[3].model.head->channels.back() = 16;
  variants[4].guidance.config.scale = 3.0;
  variants[5].training.learning_rate = 2e-3;
  variants[6].toy.noise = 0.02;
  variants[7].output_dir = "elsewhere";
  for (const auto& v : variants) CHECK(config_hash(v) != h);
}

TEST_CASE("csv tables are strict") {
  CsvTable t({"name", "n", "x"});
  t.row({std::string("a"), 3LL, 0.1});
  t.row({std::string("b"), -1LL, 1.0 / 3.0});
  CHECK_THROWS_AS(t.row({1.0}), InvalidParameter);
  const auto rows = parse_csv(t.str());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"name", "n", "x"});
  CHECK(rows[1][2] == "0.10000000000000001");
  CHECK(std::stod(rows[2][2]) == 1.0 / 3.0);
  CHECK(rows[2][1] == "-1");
}

TEST_CASE("theory suite") {
  TheorySection cfg;
  cfg.cases = 40;
  const auto ok = run_theory_suite(cfg, 3);
  CHECK(ok.passed());
  for (const auto& p : ok.properties) {
    INFO(p.name << ": " << p.failure);
    CHECK(p.passed);
    CHECK(p.table.rows() > 0);
  }
  // A one-dimensional law reduces DiT to DiP exactly.
  for (const auto& row : parse_csv(ok.property("single_patch_reduction").table.str()))
    if (row[1] == "1") CHECK(row.back() == "0");

  cfg.corrupt_m_hat = 1e-3;
  const auto bad = run_theory_suite(cfg, 3);
  CHECK(!bad.passed());
  CHECK(!bad.property("oracle_equivalence").passed);
  CHECK(bad.property("oracle_equivalence").failure.find("dit") != std::string::npos);
  CHECK(bad.property("gain_monotonicity").passed);
}

TEST_CASE("theory-check command writes one CSV per property and a summary") {
  const fs::path dir = scratch("theory");
  ExperimentConfig c = parse_config(R"({"experiment": "theory-check", "theory": {"cases": 20}})");
  c.output_dir = dir.string();
  const RunReport r = run_experiment(c);
  CHECK(r.passed);
  for (const char* f : {"oracle_equivalence.csv", "gain_monotonicity.csv", "spectral_expansion.csv",
                        "high_band_attenuation.csv", "single_patch_reduction.csv", "summary.csv", "report.json"})
    CHECK(fs::exists(dir / f));
  const std::string first = read_file(dir / "oracle_equivalence.csv");
  run_experiment(c);
  CHECK(read_file(dir / "oracle_equivalence.csv") == first);
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(j["config_hash"] == config_hash(c));
  for (const auto& m : j["metrics"]) {
    CHECK(!m["estimator"].get<std::string>().empty());
    CHECK(m["samples"].get<long long>() >= 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("toy curves") {
  ToyManifoldSpec spec;
  const MatrixXd a = generate_toy_curves(spec, 6, 1);
  CHECK(a == generate_toy_curves(spec, 6, 1));
  CHECK(a != generate_toy_curves(spec, 6, 2));
  // DCT energy is the squared norm (orthonormal basis).
  CHECK((dct_band_energy(a, 0, spec.length) - a.rowwise().squaredNorm()).cwiseAbs().maxCoeff() < 1e-10);

  ToyManifoldSpec smooth = spec;
  smooth.branches = 0;
  smooth.noise = 0;
  const MatrixXd s = generate_toy_curves(smooth, 6, 1);
  CHECK(dct_band_energy(s, smooth.high_band_start(), smooth.length).maxCoeff() <
        0.02 * dct_band_energy(s, 0, smooth.length).minCoeff());
  CHECK(dct_band_energy(a, spec.high_band_start(), spec.length).minCoeff() > 0.1);
  CHECK(spec.high_band_start() == 5);

  spec.branch_multiplier = 1.0;
  CHECK_THROWS_AS(spec.validate(), InvalidParameter);
}

TEST_CASE("toy-manifold command is deterministic") {
  const fs::path dir = scratch("toy");
  ExperimentConfig c = parse_config(R"({"experiment": "toy-manifold",
    "toy": {"train_samples": 32, "test_samples": 8, "patch_hidden": 8, "image_hidden": 8, "plot_samples": 2},
    "training": {"steps": 20, "batch_size": 4}, "sampler": {"steps": 5}})");
  c.output_dir = dir.string();
  const RunReport a = run_experiment(c);
  const std::string probe = read_file(dir / "toy_probe.csv");
  const std::string gen = read_file(dir / "toy_generated.csv");
  const RunReport b = run_experiment(c);
  CHECK(read_file(dir / "toy_probe.csv") == probe);
  CHECK(read_file(dir / "toy_generated.csv") == gen);
  for (const char* m : {"hf_error.patch", "hf_error.image", "lf_error.patch", "lf_error.image"})
    CHECK(a.metric(m).value == b.metric(m).value);
  CHECK(parse_csv(probe)[0] == std::vector<std::string>{"sample", "index", "x", "y_true", "y_patch", "y_image"});
  fs::remove_all(dir);
}

TEST_CASE("overfit-image with a single token and from an image file") {
  const fs::path dir = scratch("overfit");
  ExperimentConfig c = parse_config(R"({"experiment": "overfit-image",
    "model": {"height": 8, "width": 8, "channels": 3, "patch": 8,
              "backbone": {"layers": 1, "hidden": 8, "heads": 2, "time_frequencies": 8},
              "head": {"channels": [4]}},
    "training": {"steps": 3, "batch_size": 2}, "sampler": {"steps": 4}})");
  c.output_dir = dir.string();
  const RunReport r = run_experiment(c);
  CHECK(std::isfinite(r.metric("psnr_probe.backbone").value));
  CHECK(std::isfinite(r.metric("psnr_probe.detailer").value));
  CHECK(r.metric("parameters.detailer").value > 0);
  CHECK(r.metric("parameters.detailer").value != r.metric("parameters.backbone").value);
  const Image target = read_image(dir / "target.png");
  CHECK(target.height == 8);

  c.overfit.image = (dir / "target.png").string();
  c.model.scheme.height = c.model.scheme.width = 64;  // replaced by the file's size
  const RunReport first = run_experiment(c);
  const RunReport again = run_experiment(c);
  CHECK(again.metric("psnr_probe.backbone").value == first.metric("psnr_probe.backbone").value);
  CHECK(read_image(dir / "target.png").values == target.values);

  c.overfit.image = (dir / "missing.png").string();
  CHECK_THROWS(run_experiment(c));
  fs::remove_all(dir);
}

TEST_CASE("train-gaussian, sample and guidance identities") {
  const fs::path dir = scratch("gaussian");
  ExperimentConfig c = tiny_gaussian(dir);
  const RunReport trained = run_experiment(c);
  CHECK(fs::exists(dir / "checkpoint.bin"));
  CHECK(trained.metric("sampler_steps").value == 10);
  CHECK(trained.metric("fd.oracle").value < trained.metric("fd.model").value);

  c.experiment = Experiment::sample;
  const RunReport sampled = run_experiment(c);
  CHECK(sampled.metric("fd.model").value == trained.metric("fd.model").value);

  // Guidance at scale 1 is the unguided sampler, bitwise.
  const std::string plain = read_file(dir / "samples.csv");
  c.guidance.enabled = true;
  c.guidance.config.scale = 1.0;
  run_experiment(c);
  CHECK(read_file(dir / "samples.csv") == plain);
  c.guidance.config.scale = 3.0;
  run_experiment(c);
  CHECK(read_file(dir / "samples.csv") != plain);

  c.sampler.use_oracle = true;
  const RunReport oracle = run_experiment(c);
  CHECK_THROWS(oracle.metric("fd.model"));

  ExperimentConfig mismatch = c;
  mismatch.sampler.use_oracle = false;
  mismatch.model.backbone.hidden = 16;
  CHECK_THROWS_AS(run_experiment(mismatch), ShapeMismatch);
  fs::remove_all(dir);
}

TEST_CASE("default sampler steps are 100") {
  CHECK(parse_config(R"({"experiment": "sample"})").sampler.steps == 100);
  CHECK(parse_config(read_file(DIP_CONFIG_DIR "/train_gaussian.json")).sampler.steps == 100);
}
