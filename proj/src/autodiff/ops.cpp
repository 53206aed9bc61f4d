#include "layoutmuse/autodiff/ops.hpp"

#include <array>
#include <cmath>
#include <map>
#include <mutex>

#include "kernels.hpp"

namespace layoutmuse::ad {

namespace {

template <typename T>
using V = BasicVar<T>;
template <typename T>
using Vec = std::vector<BasicVar<T>>;

template <typename T>
void require_same(const V<T>& a, const V<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

template <typename T, typename F>
BasicTensor<T> map1(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename T, typename F>
BasicTensor<T> map2(const BasicTensor<T>& a, const BasicTensor<T>& b, F f) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  r.extent = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
  require_same(a, b, "add");
  std::array<V<T>, 2> in{a, b};
  return a.tape().record("add", map2(a.value(), b.value(), [](T x, T y) { return x + y; }), in,
                         [](const V<T>& g, const V<T>&) { return Vec<T>{g, g}; });
}

template <typename T>
BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b) {
  require_same(a, b, "sub");
  std::array<V<T>, 2> in{a, b};
  return a.tape().record("sub", map2(a.value(), b.value(), [](T x, T y) { return x - y; }), in,
                         [](const V<T>& g, const V<T>&) { return Vec<T>{g, scale(g, -1.0)}; });
}

template <typename T>
BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b) {
  require_same(a, b, "mul");
  std::array<V<T>, 2> in{a, b};
  return a.tape().record("mul", map2(a.value(), b.value(), [](T x, T y) { return x * y; }), in,
                         [a, b](const V<T>& g, const V<T>&) { return Vec<T>{mul(g, b), mul(g, a)}; });
}

template <typename T>
BasicVar<T> div(const BasicVar<T>& a, const BasicVar<T>& b) {
  require_same(a, b, "div");
  std::array<V<T>, 2> in{a, b};
  return a.tape().record("div", map2(a.value(), b.value(), [](T x, T y) { return x / y; }), in,
                         [b](const V<T>& g, const V<T>& y) {
                           V<T> ga = div(g, b);
                           return Vec<T>{ga, scale(mul(ga, y), -1.0)};
                         });
}

template <typename T>
BasicVar<T> scale(const BasicVar<T>& a, double c) {
  const T k = static_cast<T>(c);
  std::array<V<T>, 1> in{a};
  return a.tape().record("scale", map1(a.value(), [k](T x) { return k * x; }), in,
                         [c](const V<T>& g, const V<T>&) { return Vec<T>{scale(g, c)}; });
}

template <typename T>
BasicVar<T> add_scalar(const BasicVar<T>& a, double c) {
  const T k = static_cast<T>(c);
  std::array<V<T>, 1> in{a};
  return a.tape().record("add_scalar", map1(a.value(), [k](T x) { return x + k; }), in,
                         [](const V<T>& g, const V<T>&) { return Vec<T>{g}; });
}

template <typename T>
BasicVar<T> mul_scalar(const BasicVar<T>& x, const BasicVar<T>& s) {
  if (s.value().size() != 1) throw ShapeMismatch("mul_scalar: scale must have one element");
  const T k = s.value()[0];
  std::array<V<T>, 2> in{x, s};
  return x.tape().record("mul_scalar", map1(x.value(), [k](T v) { return k * v; }), in,
                         [x, s](const V<T>& g, const V<T>&) {
                           return Vec<T>{mul_scalar(g, s), reshape(sum(mul(g, x)), s.shape())};
                         });
}

template <typename T>
BasicVar<T> square(const BasicVar<T>& a) {
  return mul(a, a);
}

template <typename T>
BasicVar<T> sqrt(const BasicVar<T>& a) {
  std::array<V<T>, 1> in{a};
  return a.tape().record("sqrt", map1(a.value(), [](T x) { return std::sqrt(x); }), in,
                         [](const V<T>& g, const V<T>& y) { return Vec<T>{div(scale(g, 0.5), y)}; });
}

template <typename T>
BasicVar<T> tanh(const BasicVar<T>& a) {
  std::array<V<T>, 1> in{a};
  return a.tape().record("tanh", map1(a.value(), [](T x) { return std::tanh(x); }), in,
                         [](const V<T>& g, const V<T>& y) {
                           return Vec<T>{mul(g, add_scalar(scale(mul(y, y), -1.0), 1.0))};
                         });
}

template <typename T>
BasicVar<T> leaky_relu(const BasicVar<T>& a, double slope) {
  const T k = static_cast<T>(slope);
  const BasicTensor<T>& x = a.value();
  BasicTensor<T> out(x.shape());
  auto mask = std::make_shared<BasicTensor<T>>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T m = x[i] > T{0} ? T{1} : k;
    (*mask)[i] = m;
    out[i] = m * x[i];
  }
  std::array<V<T>, 1> in{a};
  // The slope mask is piecewise constant, so the second derivative is zero a.e.
  return a.tape().record("leaky_relu", std::move(out), in, [mask](const V<T>& g, const V<T>&) {
    return Vec<T>{mul(g, g.tape().constant(*mask))};
  });
}

// ------------------------------------------------------------ linear algebra

template <typename T>
BasicVar<T> matmul(const BasicVar<T>& a, const BasicVar<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeMismatch("matmul: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  BasicTensor<T> out(Shape{m, n});
  kernels::gemm<T>(false, false, m, n, k, T{1}, a.value().ptr(), k, b.value().ptr(), n, T{0}, out.ptr(), n);
  std::array<V<T>, 2> in{a, b};
  return a.tape().record("matmul", std::move(out), in, [a, b](const V<T>& g, const V<T>&) {
    return Vec<T>{matmul(g, transpose(b)), matmul(transpose(a), g)};
  });
}

template <typename T>
BasicVar<T> transpose(const BasicVar<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeMismatch("transpose needs rank 2, got " + shape_str(s));
  const int r = s[0], c = s[1];
  BasicTensor<T> out(Shape{c, r});
  const BasicTensor<T>& x = a.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = x[static_cast<std::size_t>(i) * c + j];
  std::array<V<T>, 1> in{a};
  return a.tape().record("transpose", std::move(out), in,
                         [](const V<T>& g, const V<T>&) { return Vec<T>{transpose(g)}; });
}

template <typename T>
BasicVar<T> reshape(const BasicVar<T>& a, Shape shape) {
  BasicTensor<T> out = a.value().reshaped(std::move(shape));
  Shape original = a.shape();
  std::array<V<T>, 1> in{a};
  return a.tape().record("reshape", std::move(out), in, [original](const V<T>& g, const V<T>&) {
    return Vec<T>{reshape(g, original)};
  });
}

template <typename T>
BasicVar<T> concat(std::span<const BasicVar<T>> parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  const AxisSplit base = split_axis(out_shape, axis);
  std::vector<int> extents;
  int total = 0;
  for (const V<T>& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != out_shape[i]) {
        throw ShapeMismatch("concat: " + shape_str(s) + " vs " + shape_str(out_shape) + " on axis " +
                            std::to_string(axis));
      }
    }
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const BasicTensor<T>& src = parts[k].value();
    const std::size_t chunk = static_cast<std::size_t>(extents[k]) * base.inner;
    const std::size_t row = static_cast<std::size_t>(total) * base.inner;
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(src.ptr() + o * chunk, chunk, out.ptr() + o * row + offset);
    }
    offset += chunk;
  }
  return parts[0].tape().record("concat", std::move(out), parts, [extents, axis](const V<T>& g, const V<T>&) {
    Vec<T> grads;
    int start = 0;
    for (int e : extents) {
      grads.push_back(slice(g, axis, start, e));
      start += e;
    }
    return grads;
  });
}

template <typename T>
BasicVar<T> slice(const BasicVar<T>& a, int axis, int start, int length) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  if (start < 0 || length < 0 || static_cast<std::size_t>(start + length) > sp.extent) {
    throw ShapeMismatch("slice out of range on " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  BasicTensor<T> out(out_shape);
  const BasicTensor<T>& x = a.value();
  const std::size_t chunk = static_cast<std::size_t>(length) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.ptr() + o * sp.extent * sp.inner + static_cast<std::size_t>(start) * sp.inner, chunk,
                out.ptr() + o * chunk);
  }
  const int total = static_cast<int>(sp.extent);
  std::array<V<T>, 1> in{a};
  return a.tape().record("slice", std::move(out), in, [axis, start, total](const V<T>& g, const V<T>&) {
    return Vec<T>{pad(g, axis, start, total)};
  });
}

template <typename T>
BasicVar<T> pad(const BasicVar<T>& a, int axis, int before, int total) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  const int length = static_cast<int>(sp.extent);
  if (before < 0 || before + length > total) throw ShapeMismatch("pad out of range");
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = total;
  BasicTensor<T> out(out_shape);
  const BasicTensor<T>& x = a.value();
  const std::size_t chunk = sp.extent * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.ptr() + o * chunk, chunk,
                out.ptr() + o * static_cast<std::size_t>(total) * sp.inner + static_cast<std::size_t>(before) * sp.inner);
  }
  std::array<V<T>, 1> in{a};
  return a.tape().record("pad", std::move(out), in, [axis, before, length](const V<T>& g, const V<T>&) {
    return Vec<T>{slice(g, axis, before, length)};
  });
}

// ------------------------------------------------------ reductions/broadcasts

template <typename T>
BasicVar<T> sum(const BasicVar<T>& a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += static_cast<double>(v);
  Shape original = a.shape();
  std::array<V<T>, 1> in{a};
  return a.tape().record("sum", BasicTensor<T>::scalar(static_cast<T>(acc)), in,
                         [original](const V<T>& g, const V<T>&) { return Vec<T>{broadcast_scalar(g, original)}; });
}

template <typename T>
BasicVar<T> mean(const BasicVar<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

template <typename T>
BasicVar<T> broadcast_scalar(const BasicVar<T>& s, Shape shape) {
  if (s.value().size() != 1) throw ShapeMismatch("broadcast_scalar needs one element");
  Shape src = s.shape();
  std::array<V<T>, 1> in{s};
  return s.tape().record("broadcast_scalar", BasicTensor<T>(std::move(shape), s.value()[0]), in,
                         [src](const V<T>& g, const V<T>&) { return Vec<T>{reshape(sum(g), src)}; });
}

template <typename T>
BasicVar<T> sum_rows(const BasicVar<T>& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeMismatch("sum_rows on rank-0 tensor");
  const std::size_t n = static_cast<std::size_t>(s[0]);
  const std::size_t inner = a.value().size() / std::max<std::size_t>(n, 1);
  BasicTensor<T> out(Shape{s[0]});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += static_cast<double>(a.value()[i * inner + j]);
    out[i] = static_cast<T>(acc);
  }
  Shape original = s;
  std::array<V<T>, 1> in{a};
  return a.tape().record("sum_rows", std::move(out), in,
                         [original](const V<T>& g, const V<T>&) { return Vec<T>{broadcast_rows(g, original)}; });
}

template <typename T>
BasicVar<T> broadcast_rows(const BasicVar<T>& v, Shape shape) {
  if (v.shape().size() != 1 || shape.empty() || v.shape()[0] != shape[0]) {
    throw ShapeMismatch("broadcast_rows: " + shape_str(v.shape()) + " to " + shape_str(shape));
  }
  BasicTensor<T> out(std::move(shape));
  const std::size_t n = static_cast<std::size_t>(v.shape()[0]);
  const std::size_t inner = out.size() / std::max<std::size_t>(n, 1);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.ptr() + i * inner, inner, v.value()[i]);
  std::array<V<T>, 1> in{v};
  return v.tape().record("broadcast_rows", std::move(out), in,
                         [](const V<T>& g, const V<T>&) { return Vec<T>{sum_rows(g)}; });
}

template <typename T>
BasicVar<T> channel_sum(const BasicVar<T>& a) {
  const AxisSplit sp = split_axis(a.shape(), 1);
  BasicTensor<T> out(Shape{static_cast<int>(sp.extent)});
  std::vector<double> acc(sp.extent, 0.0);
  const BasicTensor<T>& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < sp.extent; ++c) {
      const T* p = x.ptr() + (o * sp.extent + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) acc[c] += static_cast<double>(p[i]);
    }
  for (std::size_t c = 0; c < sp.extent; ++c) out[c] = static_cast<T>(acc[c]);
  Shape original = a.shape();
  std::array<V<T>, 1> in{a};
  return a.tape().record("channel_sum", std::move(out), in, [original](const V<T>& g, const V<T>&) {
    return Vec<T>{channel_broadcast(g, original)};
  });
}

template <typename T>
BasicVar<T> channel_broadcast(const BasicVar<T>& v, Shape shape) {
  const AxisSplit sp = split_axis(shape, 1);
  if (v.value().size() != sp.extent) {
    throw ShapeMismatch("channel_broadcast: " + shape_str(v.shape()) + " to " + shape_str(shape));
  }
  BasicTensor<T> out(std::move(shape));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < sp.extent; ++c)
      std::fill_n(out.ptr() + (o * sp.extent + c) * sp.inner, sp.inner, v.value()[c]);
  Shape src = v.shape();
  std::array<V<T>, 1> in{v};
  return v.tape().record("channel_broadcast", std::move(out), in, [src](const V<T>& g, const V<T>&) {
    return Vec<T>{reshape(channel_sum(g), src)};
  });
}

template <typename T>
BasicVar<T> add_channel_bias(const BasicVar<T>& x, const BasicVar<T>& bias) {
  return add(x, channel_broadcast(bias, x.shape()));
}

template <typename T>
BasicVar<T> l2_norm(const BasicVar<T>& a) {
  return sqrt(sum(square(a)));
}

// --------------------------------------------------------------- convolution

template <typename T>
BasicVar<T> conv2d(const BasicVar<T>& x, const BasicVar<T>& w, ConvGeom g) {
  BasicTensor<T> out = kernels::conv_forward(x.value(), w.value(), g);
  const int h = x.shape()[2], wd = x.shape()[3];
  std::array<V<T>, 2> in{x, w};
  return x.tape().record("conv2d", std::move(out), in, [x, w, g, h, wd](const V<T>& go, const V<T>&) {
    return Vec<T>{conv_transpose2d(go, w, g, h, wd), conv2d_weight_grad(x, go, g)};
  });
}

template <typename T>
BasicVar<T> conv_transpose2d(const BasicVar<T>& x, const BasicVar<T>& w, ConvGeom g, int out_h, int out_w) {
  if (x.shape().size() != 4 || w.shape().size() != 4) throw ShapeMismatch("conv_transpose2d needs rank-4 tensors");
  if (out_h < 0) out_h = (x.shape()[2] - 1) * g.stride - 2 * g.pad + g.kernel;
  if (out_w < 0) out_w = (x.shape()[3] - 1) * g.stride - 2 * g.pad + g.kernel;
  BasicTensor<T> out = kernels::conv_input_grad(x.value(), w.value(), g, out_h, out_w);
  std::array<V<T>, 2> in{x, w};
  return x.tape().record("conv_transpose2d", std::move(out), in, [x, w, g](const V<T>& go, const V<T>&) {
    return Vec<T>{conv2d(go, w, g), conv2d_weight_grad(go, x, g)};
  });
}

template <typename T>
BasicVar<T> conv2d_weight_grad(const BasicVar<T>& x, const BasicVar<T>& grad_out, ConvGeom g) {
  BasicTensor<T> out = kernels::conv_weight_grad(x.value(), grad_out.value(), g);
  const int h = x.shape()[2], wd = x.shape()[3];
  std::array<V<T>, 2> in{x, grad_out};
  return x.tape().record("conv2d_weight_grad", std::move(out), in,
                         [x, grad_out, g, h, wd](const V<T>& wbar, const V<T>&) {
                           return Vec<T>{conv_transpose2d(grad_out, wbar, g, h, wd), conv2d(x, wbar, g)};
                         });
}

// ------------------------------------------------------------------ sampling

template <typename T>
std::shared_ptr<const SpatialMap<T>> SpatialMap<T>::transposed() const {
  auto t = std::make_shared<SpatialMap<T>>();
  t->in_h = out_h;
  t->in_w = out_w;
  t->out_h = in_h;
  t->out_w = in_w;
  const int n_out = in_h * in_w;
  std::vector<int> counts(static_cast<std::size_t>(n_out) + 1, 0);
  for (int c : col) ++counts[static_cast<std::size_t>(c) + 1];
  for (int i = 0; i < n_out; ++i) counts[static_cast<std::size_t>(i) + 1] += counts[static_cast<std::size_t>(i)];
  t->row_start = counts;
  t->col.resize(col.size());
  t->weight.resize(weight.size());
  std::vector<int> fill(counts.begin(), counts.end() - 1);
  const int rows = out_h * out_w;
  for (int r = 0; r < rows; ++r) {
    for (int e = row_start[static_cast<std::size_t>(r)]; e < row_start[static_cast<std::size_t>(r) + 1]; ++e) {
      const int dst = fill[static_cast<std::size_t>(col[static_cast<std::size_t>(e)])]++;
      t->col[static_cast<std::size_t>(dst)] = r;
      t->weight[static_cast<std::size_t>(dst)] = weight[static_cast<std::size_t>(e)];
    }
  }
  return t;
}

template <typename T>
BasicVar<T> spatial_linear(const BasicVar<T>& x, SpatialMapPtr<T> map) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] != map->in_h || s[3] != map->in_w) {
    throw ShapeMismatch("spatial_linear: input " + shape_str(s) + " vs map " + std::to_string(map->in_h) + "x" +
                        std::to_string(map->in_w));
  }
  const std::size_t planes = static_cast<std::size_t>(s[0]) * static_cast<std::size_t>(s[1]);
  const std::size_t in_sz = static_cast<std::size_t>(map->in_h) * map->in_w;
  const std::size_t out_sz = static_cast<std::size_t>(map->out_h) * map->out_w;
  BasicTensor<T> out(Shape{s[0], s[1], map->out_h, map->out_w});
  const BasicTensor<T>& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.ptr() + p * in_sz;
    T* dst = out.ptr() + p * out_sz;
    for (std::size_t r = 0; r < out_sz; ++r) {
      T acc{0};
      for (int e = map->row_start[r]; e < map->row_start[r + 1]; ++e) {
        acc += map->weight[static_cast<std::size_t>(e)] * src[map->col[static_cast<std::size_t>(e)]];
      }
      dst[r] = acc;
    }
  }
  std::array<V<T>, 1> in{x};
  return x.tape().record("spatial_linear", std::move(out), in, [map](const V<T>& g, const V<T>&) {
    return Vec<T>{spatial_linear(g, map->transposed())};
  });
}

template <typename T>
SpatialMapPtr<T> bilinear_map(int in_h, int in_w, int out_h, int out_w, std::span<const double> src_u,
                              std::span<const double> src_v) {
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  if (src_u.size() != n || src_v.size() != n) throw ShapeMismatch("bilinear_map: coordinate count mismatch");
  auto map = std::make_shared<SpatialMap<T>>();
  map->in_h = in_h;
  map->in_w = in_w;
  map->out_h = out_h;
  map->out_w = out_w;
  map->row_start.reserve(n + 1);
  map->row_start.push_back(0);
  for (std::size_t r = 0; r < n; ++r) {
    const double u = src_u[r] - 0.5;
    const double v = src_v[r] - 0.5;
    const double fu = std::floor(u), fv = std::floor(v);
    const int x0 = static_cast<int>(fu), y0 = static_cast<int>(fv);
    const double ax = u - fu, ay = v - fv;
    const std::array<int, 2> xs{x0, x0 + 1};
    const std::array<int, 2> ys{y0, y0 + 1};
    const std::array<double, 2> wx{1.0 - ax, ax};
    const std::array<double, 2> wy{1.0 - ay, ay};
    for (int j = 0; j < 2; ++j) {
      for (int i = 0; i < 2; ++i) {
        const double wgt = wy[static_cast<std::size_t>(j)] * wx[static_cast<std::size_t>(i)];
        const int xx = xs[static_cast<std::size_t>(i)], yy = ys[static_cast<std::size_t>(j)];
        if (wgt == 0.0 || xx < 0 || yy < 0 || xx >= in_w || yy >= in_h) continue;
        map->col.push_back(yy * in_w + xx);
        map->weight.push_back(static_cast<T>(wgt));
      }
    }
    map->row_start.push_back(static_cast<int>(map->col.size()));
  }
  return map;
}

template <typename T>
BasicVar<T> bilinear_sample(const BasicVar<T>& x, int out_h, int out_w, std::span<const double> src_u,
                            std::span<const double> src_v) {
  if (x.shape().size() != 4) throw ShapeMismatch("bilinear_sample needs NCHW input");
  return spatial_linear(x, bilinear_map<T>(x.shape()[2], x.shape()[3], out_h, out_w, src_u, src_v));
}

template <typename T>
SpatialMapPtr<T> blur_downsample_map(int in_h, int in_w) {
  if (in_h < 2 || in_w < 2 || in_h % 2 || in_w % 2) {
    throw ShapeMismatch("blur_downsample needs even sides, got " + std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  static std::mutex mu;
  static std::map<std::pair<int, int>, SpatialMapPtr<T>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(in_h, in_w);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  static constexpr std::array<double, 5> taps{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  auto map = std::make_shared<SpatialMap<T>>();
  map->in_h = in_h;
  map->in_w = in_w;
  map->out_h = in_h / 2;
  map->out_w = in_w / 2;
  map->row_start.push_back(0);
  for (int oy = 0; oy < map->out_h; ++oy) {
    for (int ox = 0; ox < map->out_w; ++ox) {
      std::map<int, double> acc;
      for (int a = 0; a < 5; ++a) {
        const int iy = std::clamp(2 * oy + a - 2, 0, in_h - 1);
        for (int b = 0; b < 5; ++b) {
          const int ix = std::clamp(2 * ox + b - 2, 0, in_w - 1);
          acc[iy * in_w + ix] += taps[static_cast<std::size_t>(a)] * taps[static_cast<std::size_t>(b)];
        }
      }
      for (const auto& [idx, w] : acc) {
        map->col.push_back(idx);
        map->weight.push_back(static_cast<T>(w));
      }
      map->row_start.push_back(static_cast<int>(map->col.size()));
    }
  }
  cache.emplace(key, map);
  return map;
}

template <typename T>
BasicVar<T> blur_downsample(const BasicVar<T>& x) {
  if (x.shape().size() != 4) throw ShapeMismatch("blur_downsample needs NCHW input");
  return spatial_linear(x, blur_downsample_map<T>(x.shape()[2], x.shape()[3]));
}

// ------------------------------------------------------------------ indexing

template <typename T>
BasicVar<T> gather(const BasicVar<T>& x, std::vector<int> flat_indices) {
  BasicTensor<T> out(Shape{static_cast<int>(flat_indices.size())});
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    const int idx = flat_indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= x.value().size()) throw ShapeMismatch("gather index out of range");
    out[i] = x.value()[static_cast<std::size_t>(idx)];
  }
  Shape original = x.shape();
  std::array<V<T>, 1> in{x};
  return x.tape().record("gather", std::move(out), in,
                         [idx = std::move(flat_indices), original](const V<T>& g, const V<T>&) {
                           return Vec<T>{scatter(g, idx, original)};
                         });
}

template <typename T>
BasicVar<T> scatter(const BasicVar<T>& v, std::vector<int> flat_indices, Shape shape) {
  if (v.value().size() != flat_indices.size()) throw ShapeMismatch("scatter: value/index count mismatch");
  BasicTensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    const int idx = flat_indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= out.size()) throw ShapeMismatch("scatter index out of range");
    out[static_cast<std::size_t>(idx)] += v.value()[i];
  }
  Shape src = v.shape();
  std::array<V<T>, 1> in{v};
  return v.tape().record("scatter", std::move(out), in,
                         [idx = std::move(flat_indices), src](const V<T>& g, const V<T>&) {
                           return Vec<T>{reshape(gather(g, idx), src)};
                         });
}

// ------------------------------------------------------------- normalization

template <typename T>
BasicVar<T> batchnorm(const BasicVar<T>& x, const BasicVar<T>& gamma, const BasicVar<T>& beta,
                      BatchNormStats<T>& stats, bool training) {
  const AxisSplit sp = split_axis(x.shape(), 1);
  const std::size_t channels = sp.extent;
  if (gamma.value().size() != channels || beta.value().size() != channels) {
    throw ShapeMismatch("batchnorm: affine parameters do not match channel count");
  }
  if (stats.mean.size() != channels) {
    stats.mean = BasicTensor<T>(Shape{static_cast<int>(channels)}, T{0});
    stats.var = BasicTensor<T>(Shape{static_cast<int>(channels)}, T{1});
  }

  if (!training) {
    BasicTape<T>& tape = x.tape();
    BasicTensor<T> inv(Shape{static_cast<int>(channels)});
    for (std::size_t c = 0; c < channels; ++c) inv[c] = T{1} / std::sqrt(stats.var[c] + stats.eps);
    V<T> s = mul(reshape(gamma, Shape{static_cast<int>(channels)}), tape.constant(inv));
    V<T> centered = sub(x, channel_broadcast(tape.constant(stats.mean), x.shape()));
    return add(mul(centered, channel_broadcast(s, x.shape())), channel_broadcast(beta, x.shape()));
  }

  const std::size_t m = sp.outer * sp.inner;
  if (m < 2) throw ShapeMismatch("batchnorm in training mode needs more than one value per channel");
  const BasicTensor<T>& xv = x.value();
  std::vector<double> mu(channels, 0.0), var(channels, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      const T* p = xv.ptr() + (o * channels + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) mu[c] += p[i];
    }
  for (double& v : mu) v /= static_cast<double>(m);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      const T* p = xv.ptr() + (o * channels + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) var[c] += (p[i] - mu[c]) * (p[i] - mu[c]);
    }
  for (double& v : var) v /= static_cast<double>(m);

  auto xhat = std::make_shared<BasicTensor<T>>(x.shape());
  auto invstd = std::make_shared<std::vector<T>>(channels);
  BasicTensor<T> out(x.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    (*invstd)[c] = static_cast<T>(1.0 / std::sqrt(var[c] + static_cast<double>(stats.eps)));
  }
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const T xh = static_cast<T>((xv[base + i] - mu[c])) * (*invstd)[c];
        (*xhat)[base + i] = xh;
        out[base + i] = gamma.value()[c] * xh + beta.value()[c];
      }
    }
  for (std::size_t c = 0; c < channels; ++c) {
    const double unbiased = var[c] * static_cast<double>(m) / static_cast<double>(m - 1);
    stats.mean[c] = static_cast<T>(stats.momentum * stats.mean[c] + (1 - stats.momentum) * mu[c]);
    stats.var[c] = static_cast<T>(stats.momentum * stats.var[c] + (1 - stats.momentum) * unbiased);
  }

  std::array<V<T>, 3> in{x, gamma, beta};
  const Shape gshape = gamma.shape();
  return x.tape().record(
      "batchnorm", std::move(out), in,
      [xhat, invstd, gamma, sp, m, gshape](const V<T>& g, const V<T>&) {
        const BasicTensor<T>& gv = g.value();
        const std::size_t channels = sp.extent;
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (o * channels + c) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
              sum_g[c] += gv[base + i];
              sum_gx[c] += gv[base + i] * (*xhat)[base + i];
            }
          }
        BasicTensor<T> dx(gv.shape());
        BasicTensor<T> dgamma(gshape), dbeta(gshape);
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t c = 0; c < channels; ++c) {
          dgamma[c] = static_cast<T>(sum_gx[c]);
          dbeta[c] = static_cast<T>(sum_g[c]);
        }
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (o * channels + c) * sp.inner;
            const double k = static_cast<double>(gamma.value()[c]) * (*invstd)[c];
            for (std::size_t i = 0; i < sp.inner; ++i) {
              dx[base + i] = static_cast<T>(
                  k * (gv[base + i] - inv_m * sum_g[c] - (*xhat)[base + i] * inv_m * sum_gx[c]));
            }
          }
        BasicTape<T>& tape = g.tape();
        return Vec<T>{tape.constant(std::move(dx)), tape.constant(std::move(dgamma)), tape.constant(std::move(dbeta))};
      },
      /*second_order=*/false);
}

// ----------------------------------------------------------- instantiations

#define LAYOUTMUSE_INSTANTIATE_OPS(T)                                                                      \
  template BasicVar<T> add(const BasicVar<T>&, const BasicVar<T>&);                                        \
  template BasicVar<T> sub(const BasicVar<T>&, const BasicVar<T>&);                                        \
  template BasicVar<T> mul(const BasicVar<T>&, const BasicVar<T>&);                                        \
  template BasicVar<T> div(const BasicVar<T>&, const BasicVar<T>&);                                        \
  template BasicVar<T> scale(const BasicVar<T>&, double);                                                  \
  template BasicVar<T> add_scalar(const BasicVar<T>&, double);                                             \
  template BasicVar<T> mul_scalar(const BasicVar<T>&, const BasicVar<T>&);                                 \
  template BasicVar<T> square(const BasicVar<T>&);                                                         \
  template BasicVar<T> sqrt(const BasicVar<T>&);                                                           \
  template BasicVar<T> tanh(const BasicVar<T>&);                                                           \
  template BasicVar<T> leaky_relu(const BasicVar<T>&, double);                                             \
  template BasicVar<T> matmul(const BasicVar<T>&, const BasicVar<T>&);                                     \
  template BasicVar<T> transpose(const BasicVar<T>&);                                                      \
  template BasicVar<T> reshape(const BasicVar<T>&, Shape);                                                 \
  template BasicVar<T> concat(std::span<const BasicVar<T>>, int);                                          \
  template BasicVar<T> slice(const BasicVar<T>&, int, int, int);                                           \
  template BasicVar<T> pad(const BasicVar<T>&, int, int, int);                                             \
  template BasicVar<T> sum(const BasicVar<T>&);                                                            \
  template BasicVar<T> mean(const BasicVar<T>&);                                                           \
  template BasicVar<T> broadcast_scalar(const BasicVar<T>&, Shape);                                        \
  template BasicVar<T> sum_rows(const BasicVar<T>&);                                                       \
  template BasicVar<T> broadcast_rows(const BasicVar<T>&, Shape);                                          \
  template BasicVar<T> channel_sum(const BasicVar<T>&);                                                    \
  template BasicVar<T> channel_broadcast(const BasicVar<T>&, Shape);                                       \
  template BasicVar<T> add_channel_bias(const BasicVar<T>&, const BasicVar<T>&);                           \
  template BasicVar<T> l2_norm(const BasicVar<T>&);                                                        \
  template BasicVar<T> conv2d(const BasicVar<T>&, const BasicVar<T>&, ConvGeom);                           \
  template BasicVar<T> conv_transpose2d(const BasicVar<T>&, const BasicVar<T>&, ConvGeom, int, int);       \
  template BasicVar<T> conv2d_weight_grad(const BasicVar<T>&, const BasicVar<T>&, ConvGeom);               \
  template struct SpatialMap<T>;                                                                           \
  template BasicVar<T> spatial_linear(const BasicVar<T>&, SpatialMapPtr<T>);                               \
  template BasicVar<T> bilinear_sample(const BasicVar<T>&, int, int, std::span<const double>,              \
                                       std::span<const double>);                                           \
  template SpatialMapPtr<T> bilinear_map<T>(int, int, int, int, std::span<const double>,                   \
                                            std::span<const double>);                                      \
  template SpatialMapPtr<T> blur_downsample_map<T>(int, int);                                              \
  template BasicVar<T> blur_downsample(const BasicVar<T>&);                                                \
  template BasicVar<T> gather(const BasicVar<T>&, std::vector<int>);                                       \
  template BasicVar<T> scatter(const BasicVar<T>&, std::vector<int>, Shape);                               \
  template BasicVar<T> batchnorm(const BasicVar<T>&, const BasicVar<T>&, const BasicVar<T>&,               \
                                 BatchNormStats<T>&, bool);

LAYOUTMUSE_INSTANTIATE_OPS(float)
LAYOUTMUSE_INSTANTIATE_OPS(double)

#undef LAYOUTMUSE_INSTANTIATE_OPS

}  // namespace layoutmuse::ad
