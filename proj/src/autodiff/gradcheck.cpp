#include "layoutmuse/autodiff/gradcheck.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "layoutmuse/autodiff/ops.hpp"

namespace layoutmuse::ad {

namespace {

template <typename T>
BasicTensor<T> projection_weights(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  BasicTensor<T> w(shape);
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
BasicVar<T> project(BasicTape<T>& tape, const BasicVar<T>& out, std::uint64_t seed) {
  if (out.value().size() == 1) return reshape(out, Shape{1});
  return sum(mul(out, tape.constant(projection_weights<T>(out.shape(), seed))));
}

// The numeric side reduces in double so float outputs are not swamped by
// summation rounding.
template <typename T>
double evaluate(const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs, std::uint64_t seed) {
  BasicTape<T> tape;
  std::vector<BasicVar<T>> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t));
  const BasicTensor<T>& out = fn(tape, vars).value();
  if (out.size() == 1) return static_cast<double>(out[0]);
  const BasicTensor<T> w = projection_weights<T>(out.shape(), seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += static_cast<double>(out[i]) * static_cast<double>(w[i]);
  return acc;
}

}  // namespace

template <typename T>
GradCheckResult gradcheck(const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs, double eps,
                          double rtol, std::uint64_t projection_seed) {
  std::vector<BasicTensor<T>> analytic;
  {
    BasicTape<T> tape;
    std::vector<BasicVar<T>> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    BasicVar<T> out = project(tape, fn(tape, vars), projection_seed);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  std::ostringstream detail;
  std::vector<BasicTensor<T>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const T orig = probe[k][i];
      probe[k][i] = static_cast<T>(orig + eps);
      const double fp = evaluate(fn, probe, projection_seed);
      probe[k][i] = static_cast<T>(orig - eps);
      const double fm = evaluate(fn, probe, projection_seed);
      probe[k][i] = orig;
      // Use the step actually representable in T.
      const double step = static_cast<double>(static_cast<T>(orig + eps)) - static_cast<double>(static_cast<T>(orig - eps));
      const double numeric = (fp - fm) / step;
      const double a = static_cast<double>(analytic[k][i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    if (rel > rtol) {
      result.ok = false;
      detail << "input " << k << ": relative error " << rel << " > " << rtol << "; ";
    }
  }
  result.detail = detail.str();
  return result;
}

template GradCheckResult gradcheck<float>(const GradFn<float>&, const std::vector<BasicTensor<float>>&, double,
                                          double, std::uint64_t);
template GradCheckResult gradcheck<double>(const GradFn<double>&, const std::vector<BasicTensor<double>>&, double,
                                           double, std::uint64_t);

}  // namespace layoutmuse::ad
