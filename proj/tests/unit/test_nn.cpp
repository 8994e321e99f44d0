#include <dip/nn/checkpoint.hpp>
#include <dip/nn/gradcheck.hpp>

#include <doctest.h>

#include "support/op_suite.hpp"

#include <cmath>
#include <filesystem>

using namespace dip;
using namespace dip::nn;

namespace {

Var filled(Shape shape, std::uint64_t seed) {
  RandomStream rng(seed);
  VectorXd v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return leaf({std::move(shape), v});
}

struct TinyNet {
  ParameterStore store;
  Dense l1, l2;
  explicit TinyNet(std::uint64_t seed) {
    RandomStream rng(seed);
    l1 = make_dense(store, "l1", 3, 8, rng);
    l2 = make_dense(store, "l2", 8, 2, rng);
  }
  Var forward(const Var& x) const { return l2(silu(l1(x))); }
};

std::string train_tiny(std::uint64_t seed, int steps) {
  TinyNet net(seed);
  AdamW opt(net.store, {1e-2});
  Ema ema(net.store);
  RandomStream data(seed, 1);
  for (int s = 0; s < steps; ++s) {
    VectorXd xs(12), ys(8);
    for (auto& v : xs) v = data.normal();
    for (auto& v : ys) v = data.normal();
    net.store.zero_grad();
    backward(mse(net.forward(constant({{4, 3}, xs})), constant({{4, 2}, ys})));
    opt.step(net.store);
    ema.update(net.store);
  }
  return encode_checkpoint(capture(net.store, &opt, &ema, seed, static_cast<std::uint64_t>(steps)));
}

}  // namespace

TEST_CASE("every op passes the finite-difference check") {
  for (const auto& r : testing::run_op_gradient_suite()) {
    INFO(r.name << " max rel error " << r.max_relative_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("op examples") {
  CHECK(silu(constant({{1}, VectorXd::Zero(1)})).value()(0) == 0.0);

  const Var x = filled({2, 3, 4, 4}, 1);
  VectorXd eye = VectorXd::Zero(9);
  for (Index c = 0; c < 3; ++c) eye(c * 3 + c) = 1.0;
  CHECK(conv2d(x, constant({{3, 3, 1, 1}, eye}), {}, 0).value() == x.value());

  const Var flat = constant({{1, 2, 4, 4}, VectorXd::Constant(32, 0.7)});
  CHECK(upsample_nearest(avg_pool2d(flat)).value() == flat.value());

  const Var q = filled({12, 8}, 2), k = filled({12, 8}, 3);
  const Tensor w = attention_weights(q, k, 3, 2);
  REQUIRE(w.shape == Shape{3, 2, 4, 4});
  for (Index r = 0; r < 24; ++r) CHECK(std::abs(w.data.segment(r * 4, 4).sum() - 1.0) < 1e-6);
}

TEST_CASE("shape errors name the op and shapes") {
  const Var a = filled({2, 3}, 1), b = filled({4, 5}, 2);
  try {
    matmul(a, b);
    FAIL("expected ShapeMismatch");
  } catch (const ShapeMismatch& e) {
    const std::string what = e.what();
    CHECK(what.find("matmul") != std::string::npos);
    CHECK(what.find("[2,3]") != std::string::npos);
    CHECK(what.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(filled({1, 2, 4, 4}, 1), filled({1, 3, 3, 3}, 2), {}, 1), ShapeMismatch);
  CHECK_THROWS_AS(avg_pool2d(filled({1, 1, 3, 3}, 1)), ShapeMismatch);
  CHECK_THROWS_AS(attention(a, a, a, 1, 2), ShapeMismatch);
  CHECK_THROWS_AS(backward(a), ShapeMismatch);
}

TEST_CASE("gradients accumulate through shared subgraphs") {
  Var x = filled({3}, 4);
  backward(reshape(mse(add(x, x), constant({{3}, VectorXd::Zero(3)})), {1}));
  // d/dx mean((2x)^2) = 8x / 3
  CHECK((x.grad() - 8.0 / 3.0 * x.value()).norm() < 1e-12);
}

TEST_CASE("parameter store") {
  ParameterStore store;
  RandomStream rng(1);
  make_dense(store, "a", 2, 3, rng);
  CHECK_THROWS_AS(make_dense(store, "a", 2, 3, rng), InvalidParameter);
  CHECK(store.count() == 9);
  CHECK(store.count("a.w") == 6);
  const auto z = make_conv(store, "c", 2, 4, 3, 1, rng, Init::zero);
  CHECK(z.weight.value().isZero());
  CHECK(store.get("a.weight").value().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(2.0));
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore store;
    Var p = store.add("p", {{2}, VectorXd::Constant(2, 1.5)});
    AdamW opt(store);
    p.node()->grad_buffer().setZero();
    opt.step(store);
    CHECK(p.value() == VectorXd::Constant(2, 1.5));
  }
  SUBCASE("descent on x^2") {
    ParameterStore store;
    Var p = store.add("x", {{1}, VectorXd::Ones(1)});
    AdamW opt(store, {0.1});
    store.zero_grad();
    backward(mse(p, constant({{1}, VectorXd::Zero(1)})));
    CHECK(p.grad()(0) == 2.0);
    opt.step(store);
    // Bias-corrected first step: lr * g / (|g| + eps).
    CHECK(p.value()(0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(p.value()(0) < 1.0);
  }
  SUBCASE("constant gradient keeps the bias-corrected step size") {
    ParameterStore store;
    Var p = store.add("x", {{1}, VectorXd::Zero(1)});
    AdamW opt(store, {0.01});
    for (int k = 0; k < 3; ++k) {
      p.node()->grad_buffer()(0) = -3.0;
      opt.step(store);
      p.node()->grad.resize(0);
    }
    CHECK(p.value()(0) == doctest::Approx(3 * 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("decoupled weight decay") {
    ParameterStore store;
    Var p = store.add("x", {{1}, VectorXd::Constant(1, 2.0)});
    AdamW opt(store, {0.1, 0.5});
    p.node()->grad_buffer().setZero();
    opt.step(store);
    CHECK(p.value()(0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }
  SUBCASE("non-finite gradient names the parameter") {
    ParameterStore store;
    Var p = store.add("weights.bad", {{1}, VectorXd::Ones(1)});
    AdamW opt(store);
    p.node()->grad_buffer()(0) = std::nan("");
    try {
      opt.step(store);
      FAIL("expected Divergence");
    } catch (const Divergence& e) {
      CHECK(std::string(e.what()).find("weights.bad") != std::string::npos);
    }
    CHECK(p.value()(0) == 1.0);
  }
}

TEST_CASE("ema") {
  ParameterStore store;
  Var p = store.add("p", {{1}, VectorXd::Ones(1)});
  store.add("frozen", {{1}, VectorXd::Ones(1)}, false);
  Ema ema(store);
  CHECK(ema.names() == std::vector<std::string>{"p"});
  ema.shadow()[0].setZero();
  for (int i = 0; i < 3; ++i) ema.update(store);
  CHECK(ema.shadow()[0](0) == doctest::Approx(2.99970001e-4).epsilon(1e-12));
  CHECK(ema.shadow()[0](0) == doctest::Approx(1.0 - std::pow(0.9999, 3)).epsilon(1e-12));

  ema.shadow()[0].setZero();
  for (int n = 1; n <= 1000; ++n) {
    ema.update(store);
    if (n % 250 == 0) CHECK(1.0 - ema.shadow()[0](0) == doctest::Approx(std::pow(0.9999, n)).epsilon(1e-10));
  }

  Ema instant(store, 0.0);
  instant.shadow()[0].setConstant(5.0);
  instant.update(store);
  CHECK(instant.shadow()[0](0) == 1.0);
  p.mutable_value()(0) = 7.0;
  instant.update(store);
  instant.copy_to(store);
  CHECK(p.value()(0) == 7.0);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const std::string bytes = train_tiny(3, 4);
  const Checkpoint c = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(c) == bytes);
  CHECK(c.step == 4);
  CHECK(c.seed == 3);
  REQUIRE(c.optimizer);
  CHECK(c.optimizer->step == 4);
  REQUIRE(c.ema);

  TinyNet net(99);
  AdamW opt(net.store);
  Ema ema(net.store);
  restore_parameters(c, net.store);
  restore_optimizer(c, opt);
  restore_ema(c, ema);
  CHECK(encode_checkpoint(capture(net.store, &opt, &ema, 3, 4)).substr(0, 64) == bytes.substr(0, 64));
  for (const auto& p : c.params) CHECK(net.store.get(p.name).value() == p.tensor.data);

  const auto path = std::filesystem::temp_directory_path() / "dip_test_ckpt.bin";
  save_checkpoint(path, c);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), InvalidParameter);
  CHECK_THROWS_AS(decode_checkpoint("NOTACKPT" + bytes.substr(8)), InvalidParameter);

  ParameterStore other;
  RandomStream rng(0);
  make_dense(other, "l1", 3, 4, rng);
  CHECK_THROWS_AS(restore_parameters(c, other), ShapeMismatch);
}

TEST_CASE("training is bitwise deterministic for 10 steps") {
  CHECK(train_tiny(5, 10) == train_tiny(5, 10));
  CHECK(train_tiny(5, 10) != train_tiny(6, 10));
}
