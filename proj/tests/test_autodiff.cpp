#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "layoutmuse/autodiff/gradcheck.hpp"
#include "layoutmuse/autodiff/ops.hpp"
#include "layoutmuse/diagnostics.hpp"

using namespace layoutmuse;
using namespace layoutmuse::ad;

namespace {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// Values bounded away from zero so kinks (leaky_relu) and poles (div, sqrt) stay
// outside the finite-difference stencil.
template <typename T>
BasicTensor<T> away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(sign(rng) ? mag(rng) : -mag(rng));
  return t;
}

template <typename T>
BasicTensor<T> positive(Shape shape, std::mt19937_64& rng) {
  return random_tensor<T>(std::move(shape), rng, 0.5, 2.0);
}

template <typename T>
struct Tol;
template <>
struct Tol<float> {
  static constexpr double eps = 1e-3;
  static constexpr double rtol = 1e-3;
};
template <>
struct Tol<double> {
  static constexpr double eps = 1e-6;
  static constexpr double rtol = 1e-6;
};

}  // namespace

TEST_CASE("forward values and shapes") {
  Tape tape;
  Var z = tape.constant(Tensor(Shape{1}, 0.0f));
  CHECK(tanh(z).value()[0] == 0.0f);

  Var x = tape.constant(Tensor(Shape{1, 4, 8, 8}, 1.0f));
  Var w = tape.constant(Tensor(Shape{4, 2, 4, 4}, 0.1f));
  Var up = conv_transpose2d(x, w, ConvGeom{4, 2, 1});
  CHECK(up.shape() == Shape{1, 2, 16, 16});
  Var wd = tape.constant(Tensor(Shape{3, 2, 4, 4}, 0.1f));
  CHECK(conv2d(up, wd, ConvGeom{4, 2, 1}).shape() == Shape{1, 3, 8, 8});

  Var p = tape.constant(Tensor(Shape{1, 4, 8, 8}));
  Var q = tape.constant(Tensor(Shape{1, 2, 8, 8}));
  std::array<Var, 2> parts{p, q};
  CHECK(concat<float>(parts, 1).shape() == Shape{1, 6, 8, 8});

  Var bad = tape.constant(Tensor(Shape{2, 3}));
  CHECK_THROWS_AS(matmul(bad, bad), ShapeMismatch);
}

TEST_CASE("first-order backward basics") {
  Tape tape;
  Var x = tape.input(Tensor(Shape{1}, 3.0f));
  Var y = mul(x, x);
  tape.backward(y);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0));

  Tape t2;
  Var used = t2.input(Tensor(Shape{2}, 1.0f));
  Var unused = t2.input(Tensor(Shape{3}, 1.0f));
  t2.backward(sum(square(used)));
  Tensor g = t2.grad(unused);
  CHECK(g.size() == 3);
  for (float v : g.data()) CHECK(v == 0.0f);

  Tape t3;
  Var v = t3.input(Tensor(Shape{2}, 1.0f));
  CHECK_THROWS_AS(t3.backward(scale(v, 2.0)), NonScalarOutput);
}

TEST_CASE("parameters accumulate gradients") {
  Parameter p("w", Tensor(Shape{2}, std::vector<float>{1.0f, -2.0f}));
  Tape tape;
  Var w = tape.parameter(p);
  tape.backward(sum(square(w)));
  CHECK(p.grad[0] == doctest::Approx(2.0));
  CHECK(p.grad[1] == doctest::Approx(-4.0));
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{1}, 1.0f));
  Var zero = tape.constant(Tensor(Shape{1}, 0.0f));
  CHECK_THROWS_AS(div(a, zero), NonFiniteValue);
}

void expect_all(const std::vector<diagnostics::CheckResult>& results) {
  CHECK(results.size() >= 30);
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail << " max rel " << r.max_rel_error);
    CHECK(r.ok);
  }
}

TEST_CASE("every op matches central differences in float32") {
  for (std::uint64_t seed : {1u, 2u, 3u}) expect_all(diagnostics::op_suite<float>(seed));
}

TEST_CASE("every op matches central differences in float64") {
  for (std::uint64_t seed : {11u, 12u, 13u}) expect_all(diagnostics::op_suite<double>(seed));
}

TEST_CASE("gradient of gradient: linear critic closed form") {
  // D(x) = w.x  =>  grad_x D = w, penalty = (||w|| - 1)^2,
  // d penalty / dw = 2 (||w|| - 1) w / ||w||.
  const std::vector<double> wv{0.3, -1.2, 2.0, 0.7};
  BasicParameter<double> w("w", Tensor64(Shape{4, 1}, wv));
  Tape64 tape;
  Var64 wvar = tape.parameter(w);
  Var64 x = tape.input(Tensor64(Shape{1, 4}, std::vector<double>{0.1, 0.2, -0.3, 0.4}));
  Var64 score = sum(matmul(x, wvar));
  Var64 gx = tape.grad_graph(score, x);
  Var64 norm = l2_norm(gx);
  Var64 penalty = square(add_scalar(norm, -1.0));
  tape.backward(penalty);

  double n = 0.0;
  for (double v : wv) n += v * v;
  n = std::sqrt(n);
  CHECK(penalty.value()[0] == doctest::Approx((n - 1) * (n - 1)).epsilon(1e-12));
  for (std::size_t i = 0; i < wv.size(); ++i) {
    CHECK(std::abs(w.grad[i] - 2 * (n - 1) * wv[i] / n) < 1e-6);
  }
}

TEST_CASE("gradient of gradient: squared norm") {
  // D(x) = ||x||^2 => grad = 2x; d/dx <u, 2x> = 2u.
  Tape64 tape;
  Var64 x = tape.input(Tensor64(Shape{3}, std::vector<double>{1.0, -2.0, 0.5}));
  Var64 d = sum(square(x));
  Var64 gx = tape.grad_graph(d, x);
  CHECK(gx.value()[0] == doctest::Approx(2.0));
  CHECK(gx.value()[1] == doctest::Approx(-4.0));
  const Tensor64 u(Shape{3}, std::vector<double>{0.5, 1.5, -1.0});
  tape.backward(sum(mul(gx, tape.constant(u))));
  Tensor64 g2 = tape.grad(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g2[i] == doctest::Approx(2.0 * u[i]));
}

TEST_CASE("gradient of gradient: constant critic") {
  BasicParameter<double> b("b", Tensor64(Shape{1}, 0.7));
  Tape64 tape;
  Var64 bias = tape.parameter(b);
  Var64 x = tape.input(Tensor64(Shape{2}, 1.0));
  Var64 score = add(sum(scale(x, 0.0)), bias);
  Var64 gx = tape.grad_graph(score, x);
  Var64 penalty = square(add_scalar(sqrt(add_scalar(sum(square(gx)), 1e-12)), -1.0));
  CHECK(penalty.value()[0] == doctest::Approx(1.0).epsilon(1e-5));
  tape.backward(penalty);
  CHECK(b.grad[0] == 0.0);
}

TEST_CASE("second-order rules match finite differences of the first-order gradient") {
  // f(x, w) = || d/dx sum(leaky(conv(x, w))) ||^2 ; differentiating it needs
  // the second-order rules of conv2d, leaky_relu, blur and matmul.
  std::mt19937_64 rng(5);
  auto fn = [](Tape64&, std::span<const Var64> in) {
    Var64 h = leaky_relu(conv2d(in[0], in[1], ConvGeom{4, 2, 1}), 0.2);
    Var64 k = blur_downsample(in[0]);
    std::array<Var64, 2> parts{h, k};
    Var64 flat = reshape(concat<double>(parts, 1), Shape{1, 48});
    Var64 score = sum(matmul(flat, in[2]));
    Var64 g = score.tape().grad_graph(score, in[0]);
    return sum(square(g));
  };
  std::vector<Tensor64> inputs{away_from_zero<double>({1, 1, 8, 8}, rng), random_tensor<double>({2, 1, 4, 4}, rng),
                               random_tensor<double>({48, 1}, rng)};
  GradCheckResult r = gradcheck<double>(fn, inputs, 1e-6, 1e-6);
  INFO(r.detail);
  CHECK(r.ok);
}

TEST_CASE("grad_graph through first-order-only ops is rejected") {
  Tape tape;
  Var x = tape.input(Tensor(Shape{4, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 9}));
  Var gamma = tape.constant(Tensor(Shape{2}, 1.0f));
  Var beta = tape.constant(Tensor(Shape{2}, 0.0f));
  BatchNormStats<float> stats;
  Var y = sum(square(batchnorm(x, gamma, beta, stats, true)));
  CHECK_THROWS_AS(tape.grad_graph(y, x), UnsupportedSecondOrder);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  BatchNormStats<float> stats;
  stats.mean = Tensor(Shape{2}, std::vector<float>{1.0f, -1.0f});
  stats.var = Tensor(Shape{2}, std::vector<float>{4.0f, 1.0f});
  stats.eps = 0.0f;
  Tape tape;
  Var x = tape.constant(Tensor(Shape{1, 2}, std::vector<float>{3.0f, 0.0f}));
  Var g = tape.constant(Tensor(Shape{2}, 1.0f));
  Var b = tape.constant(Tensor(Shape{2}, 0.5f));
  Var y = batchnorm(x, g, b, stats, false);
  CHECK(y.value()[0] == doctest::Approx(1.5));
  CHECK(y.value()[1] == doctest::Approx(1.5));
}

TEST_CASE("tape replay is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Parameter w("w", random_tensor<float>({4, 3, 4, 4}, rng));
    Var x = tape.input(random_tensor<float>({2, 3, 8, 8}, rng));
    Var y = sum(tanh(conv2d(x, tape.parameter(w), ConvGeom{4, 2, 1})));
    tape.backward(y);
    return std::make_pair(y.value(), w.grad);
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
