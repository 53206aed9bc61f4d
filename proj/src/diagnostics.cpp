#include "layoutmuse/diagnostics.hpp"

#include <array>
#include <cmath>
#include <random>
#include <type_traits>

#include "layoutmuse/autodiff/gradcheck.hpp"
#include "layoutmuse/autodiff/ops.hpp"
#include "layoutmuse/compositor.hpp"
#include "layoutmuse/training.hpp"

namespace layoutmuse::diagnostics {

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


int rand_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

template <typename T>
std::vector<CheckResult> op_suite(std::uint64_t seed) {
  using VarT = BasicVar<T>;
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> results;
  const std::string suite = std::is_same_v<T, float> ? "ops/float32" : "ops/float64";
  auto expect_gradcheck = [&](const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs, const char* what) {
    const GradCheckResult r = gradcheck<T>(fn, inputs, Tol<T>::eps, Tol<T>::rtol);
    results.push_back({suite, what, r.ok, r.max_rel_error, r.detail});
  };
  const int a = rand_int(rng, 2, 4), b = rand_int(rng, 2, 4), c = rand_int(rng, 2, 4);

  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return add(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), random_tensor<T>({a, b}, rng)}, "add");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return sub(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), random_tensor<T>({a, b}, rng)}, "sub");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return mul(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), random_tensor<T>({a, b}, rng)}, "mul");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return div(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), positive<T>({a, b}, rng)}, "div");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return mul_scalar(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), random_tensor<T>({1}, rng)}, "mul_scalar");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return sqrt(in[0]); },
                      {positive<T>({a, b}, rng)}, "sqrt");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return tanh(in[0]); },
                      {random_tensor<T>({a, b, c}, rng)}, "tanh");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return leaky_relu(in[0], 0.2); },
                      {away_from_zero<T>({a, b, c}, rng)}, "leaky_relu");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return matmul(in[0], in[1]); },
                      {random_tensor<T>({a, b}, rng), random_tensor<T>({b, c}, rng)}, "matmul");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return transpose(in[0]); },
                      {random_tensor<T>({a, b}, rng)}, "transpose");
  expect_gradcheck([a, b, c](BasicTape<T>&, std::span<const VarT> in) { return reshape(in[0], Shape{c, 1, a * b}); },
                      {random_tensor<T>({c, a * b}, rng)}, "reshape");
  expect_gradcheck(
      [](BasicTape<T>&, std::span<const VarT> in) {
        std::array<VarT, 2> parts{in[0], in[1]};
        return concat<T>(parts, 1);
      },
      {random_tensor<T>({a, 2, 3, 3}, rng), random_tensor<T>({a, 1, 3, 3}, rng)}, "concat");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return slice(in[0], 1, 1, 2); },
                      {random_tensor<T>({a, 4, 3}, rng)}, "slice");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return pad(in[0], 2, 1, 5); },
                      {random_tensor<T>({a, 2, 3}, rng)}, "pad");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return sum(in[0]); },
                      {random_tensor<T>({a, b, c}, rng)}, "sum");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return mean(in[0]); },
                      {random_tensor<T>({a, b, c}, rng)}, "mean");
  expect_gradcheck([a, b](BasicTape<T>&, std::span<const VarT> in) { return broadcast_scalar(in[0], Shape{a, b}); },
                      {random_tensor<T>({1}, rng)}, "broadcast_scalar");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return sum_rows(in[0]); },
                      {random_tensor<T>({a, b, c}, rng)}, "sum_rows");
  expect_gradcheck([a, b, c](BasicTape<T>&, std::span<const VarT> in) { return broadcast_rows(in[0], Shape{a, b, c}); },
                      {random_tensor<T>({a}, rng)}, "broadcast_rows");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return channel_sum(in[0]); },
                      {random_tensor<T>({a, b, 2, 3}, rng)}, "channel_sum");
  expect_gradcheck([a, b](BasicTape<T>&, std::span<const VarT> in) { return channel_broadcast(in[0], Shape{a, b, 2, 2}); },
                      {random_tensor<T>({b}, rng)}, "channel_broadcast");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return l2_norm(in[0]); },
                      {random_tensor<T>({a, b}, rng)}, "l2_norm");

  const ConvGeom down{4, 2, 1};
  const ConvGeom same{3, 1, 1};
  expect_gradcheck([down](BasicTape<T>&, std::span<const VarT> in) { return conv2d(in[0], in[1], down); },
                      {random_tensor<T>({2, 2, 6, 6}, rng), random_tensor<T>({3, 2, 4, 4}, rng)}, "conv2d");
  expect_gradcheck([same](BasicTape<T>&, std::span<const VarT> in) { return conv2d(in[0], in[1], same); },
                      {random_tensor<T>({1, 2, 5, 5}, rng), random_tensor<T>({2, 2, 3, 3}, rng)}, "conv2d same");
  expect_gradcheck(
      [down](BasicTape<T>&, std::span<const VarT> in) { return conv_transpose2d(in[0], in[1], down); },
      {random_tensor<T>({2, 3, 3, 3}, rng), random_tensor<T>({3, 2, 4, 4}, rng)}, "conv_transpose2d");
  expect_gradcheck(
      [down](BasicTape<T>&, std::span<const VarT> in) { return conv2d_weight_grad(in[0], in[1], down); },
      {random_tensor<T>({2, 2, 6, 6}, rng), random_tensor<T>({2, 3, 3, 3}, rng)}, "conv2d_weight_grad");

  std::vector<double> us, vs;
  std::uniform_real_distribution<double> coord(-1.0, 6.0);
  for (int i = 0; i < 4 * 5; ++i) {
    us.push_back(coord(rng));
    vs.push_back(coord(rng));
  }
  expect_gradcheck(
      [us, vs](BasicTape<T>&, std::span<const VarT> in) { return bilinear_sample(in[0], 4, 5, us, vs); },
      {random_tensor<T>({1, 2, 5, 5}, rng)}, "bilinear_sample");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return blur_downsample(in[0]); },
                      {random_tensor<T>({1, 2, 8, 6}, rng)}, "blur_downsample");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return gather(in[0], {0, 5, 5, 3}); },
                      {random_tensor<T>({2, 3}, rng)}, "gather");
  expect_gradcheck([](BasicTape<T>&, std::span<const VarT> in) { return scatter(in[0], {1, 4, 1}, Shape{2, 3}); },
                      {random_tensor<T>({3}, rng)}, "scatter");
  expect_gradcheck(
      [](BasicTape<T>&, std::span<const VarT> in) {
        BatchNormStats<T> stats;
        return batchnorm(in[0], in[1], in[2], stats, true);
      },
      {random_tensor<T>({4, 3, 2, 2}, rng), positive<T>({3}, rng), random_tensor<T>({3}, rng)}, "batchnorm");
  return results;
}

template std::vector<CheckResult> op_suite<float>(std::uint64_t);
template std::vector<CheckResult> op_suite<double>(std::uint64_t);

std::vector<CheckResult> penalty_closed_form() {
  // D(x) = w.x  =>  grad_x D = w, penalty = (||w|| - 1)^2,
  // d penalty / dw = 2 (||w|| - 1) w / ||w||.
  const std::vector<double> wv{0.3, -1.2, 2.0, 0.7};
  BasicParameter<double> w("w", Tensor64(Shape{4, 1}, wv));
  Tape64 tape;
  const Var64 wvar = tape.parameter(w);
  const Var64 x = tape.input(Tensor64(Shape{1, 4}, std::vector<double>{0.1, 0.2, -0.3, 0.4}));
  const Var64 gx = tape.grad_graph(sum(matmul(x, wvar)), x);
  const Var64 penalty = square(add_scalar(l2_norm(gx), -1.0));
  tape.backward(penalty);

  double n = 0.0;
  for (double v : wv) n += v * v;
  n = std::sqrt(n);
  const double value_err = std::abs(penalty.value()[0] - (n - 1) * (n - 1));
  double grad_err = 0.0;
  for (std::size_t i = 0; i < wv.size(); ++i) grad_err = std::max(grad_err, std::abs(w.grad[i] - 2 * (n - 1) * wv[i] / n));
  return {{"second_order", "linear critic penalty value", value_err <= 1e-6, value_err, ""},
          {"second_order", "linear critic penalty gradient", grad_err <= 1e-6, grad_err, ""}};
}

std::vector<CheckResult> training_penalty_closed_form() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  Tensor real({3, 4}), fake({3, 4});
  for (float& v : real.data()) v = u(rng);
  for (float& v : fake.data()) v = u(rng);
  const std::vector<float> mix = {0.2f, 0.6f, 0.9f};
  for (double norm : {1.0, 3.0}) {
    const training::CriticFn critic = [norm](Tape& tape, const Var& x) {
      Tensor w({4, 1});
      const float c = static_cast<float>(norm / 2.0);  // ||(c, c, c, c)|| = 2c
      for (float& v : w.data()) v = c;
      return reshape(matmul(x, tape.constant(std::move(w))), {x.shape()[0]});
    };
    Tape tape;
    const double gp = training::gradient_penalty(tape, critic, real, fake, mix).value()[0];
    const double expected = (norm - 1) * (norm - 1);
    const double err = std::abs(gp - expected);
    out.push_back({"second_order", "gradient penalty, |w| = " + std::to_string(static_cast<int>(norm)), err <= 1e-5, err,
                   ""});
  }
  return out;
}

std::vector<CheckResult> compositor_suite(std::uint64_t seed, int trials) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0, 1);
  std::uniform_int_distribution<int> cell(0, 31), side(2, 6);
  std::uniform_real_distribution<double> scale(0.6, 1.8);
  for (int trial = 0; trial < trials; ++trial) {
    compositor::SpriteSet set;
    set.width = set.height = 16;
    set.background = {unit(rng), unit(rng), unit(rng)};
    const int n = 1 + trial % 3;
    std::vector<int> cells;
    for (int i = 0; i < n; ++i) {
      imaging::RasterImage s(side(rng), side(rng), 4);
      for (float& v : s.data) v = unit(rng);
      set.sprites.push_back({std::move(s), scale(rng), i});
      int c = cell(rng) * 32 + cell(rng);
      while (std::find(cells.begin(), cells.end(), c) != cells.end()) c = cell(rng) * 32 + cell(rng);
      cells.push_back(c);
    }
    // Selected cells sit well above the rest so a finite-difference step
    // never changes which anchors are chosen.
    Tensor grid({32, 32});
    std::uniform_real_distribution<float> low(0.0f, 0.3f);
    for (float& v : grid.data()) v = low(rng);
    for (int i = 0; i < n; ++i) grid[static_cast<std::size_t>(cells[static_cast<std::size_t>(i)])] = 0.9f - 0.1f * i;

    const GradFn<float> wrt_grid = [&](Tape& tape, std::span<const Var> in) {
      return compositor::soft_composite(tape, set, in[0], n).image;
    };
    const GradCheckResult rg = gradcheck<float>(wrt_grid, {grid}, 1e-2, 1e-3, seed + trial);
    out.push_back({"compositor", "grid values, trial " + std::to_string(trial), rg.ok, rg.max_rel_error, rg.detail});

    std::vector<Tensor> sprites;
    for (const compositor::Sprite& s : set.sprites) sprites.push_back(compositor::sprite_tensor(s.rgba));
    const GradFn<float> wrt_sprites = [&](Tape& tape, std::span<const Var> in) {
      return compositor::soft_composite(tape, set, tape.constant(grid), n, in).image;
    };
    const GradCheckResult rs = gradcheck<float>(wrt_sprites, sprites, 1e-2, 1e-3, seed + 100 + trial);
    out.push_back({"compositor", "sprite pixels, trial " + std::to_string(trial), rs.ok, rs.max_rel_error, rs.detail});
  }
  return out;
}

std::vector<CheckResult> run_all() {
  std::vector<CheckResult> all;
  auto append = [&all](std::vector<CheckResult> part) {
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  };
  for (std::uint64_t seed : {1u, 2u, 3u}) append(op_suite<float>(seed));
  for (std::uint64_t seed : {11u, 12u, 13u}) append(op_suite<double>(seed));
  append(penalty_closed_form());
  append(training_penalty_closed_form());
  append(compositor_suite(7, 5));
  return all;
}

}  // namespace layoutmuse::diagnostics
