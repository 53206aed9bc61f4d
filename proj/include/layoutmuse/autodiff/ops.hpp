#pragma once

#include <memory>
#include <span>
#include <vector>

#include "layoutmuse/autodiff/tape.hpp"

namespace layoutmuse::ad {

// Convolution conventions (all square kernels, NCHW activations):
//
//   op                 weight layout        output extent
//   conv2d             (out, in, k, k)      (H + 2p - k) / s + 1
//   conv_transpose2d   (in, out, k, k)      (H - 1) * s - 2p + k  (or an explicit size)
//
// conv_transpose2d is the exact adjoint of conv2d w.r.t. its input, so the
// generator's upsampling stages (k=4, s=2, p=1) double 8->16->32 and the
// critic's downsampling stages with the same geometry halve 32->16->8.
struct ConvGeom {
  int kernel = 4;
  int stride = 2;
  int pad = 1;
};

/// Fixed sparse linear map between two spatial planes, applied per (n, c).
/// Used for bilinear sampling and the blur-downsample pyramid.
template <typename T>
struct SpatialMap {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  // CSR over output pixels.
  std::vector<int> row_start;
  std::vector<int> col;
  std::vector<T> weight;

  std::shared_ptr<const SpatialMap> transposed() const;
};

template <typename T>
using SpatialMapPtr = std::shared_ptr<const SpatialMap<T>>;

/// Running statistics for batchnorm (eval mode reads them, training updates them).
template <typename T>
struct BatchNormStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
  T momentum = T(0.9);
  T eps = T(1e-5);
};

// --- elementwise ---
template <typename T> BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b);
template <typename T> BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b);
template <typename T> BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b);
template <typename T> BasicVar<T> div(const BasicVar<T>& a, const BasicVar<T>& b);
template <typename T> BasicVar<T> scale(const BasicVar<T>& a, double c);
template <typename T> BasicVar<T> add_scalar(const BasicVar<T>& a, double c);
/// `s` has one element and multiplies every entry of `x`.
template <typename T> BasicVar<T> mul_scalar(const BasicVar<T>& x, const BasicVar<T>& s);
template <typename T> BasicVar<T> square(const BasicVar<T>& a);
template <typename T> BasicVar<T> sqrt(const BasicVar<T>& a);
template <typename T> BasicVar<T> tanh(const BasicVar<T>& a);
template <typename T> BasicVar<T> leaky_relu(const BasicVar<T>& a, double slope);

// --- linear algebra / shape ---
template <typename T> BasicVar<T> matmul(const BasicVar<T>& a, const BasicVar<T>& b);
template <typename T> BasicVar<T> transpose(const BasicVar<T>& a);
template <typename T> BasicVar<T> reshape(const BasicVar<T>& a, Shape shape);
template <typename T> BasicVar<T> concat(std::span<const BasicVar<T>> parts, int axis);
template <typename T> BasicVar<T> slice(const BasicVar<T>& a, int axis, int start, int length);
/// Zero-pads `a` along `axis` so it starts at `before` inside an extent of `total`.
template <typename T> BasicVar<T> pad(const BasicVar<T>& a, int axis, int before, int total);

// --- reductions / broadcasts (adjoint pairs) ---
template <typename T> BasicVar<T> sum(const BasicVar<T>& a);
template <typename T> BasicVar<T> mean(const BasicVar<T>& a);
template <typename T> BasicVar<T> broadcast_scalar(const BasicVar<T>& s, Shape shape);
/// Sum over every axis except the first: (N, ...) -> (N).
template <typename T> BasicVar<T> sum_rows(const BasicVar<T>& a);
template <typename T> BasicVar<T> broadcast_rows(const BasicVar<T>& v, Shape shape);
/// Sum over every axis except axis 1: (N, C, ...) -> (C).
template <typename T> BasicVar<T> channel_sum(const BasicVar<T>& a);
template <typename T> BasicVar<T> channel_broadcast(const BasicVar<T>& v, Shape shape);
template <typename T> BasicVar<T> add_channel_bias(const BasicVar<T>& x, const BasicVar<T>& bias);
template <typename T> BasicVar<T> l2_norm(const BasicVar<T>& a);

// --- convolution ---
template <typename T> BasicVar<T> conv2d(const BasicVar<T>& x, const BasicVar<T>& w, ConvGeom g);
template <typename T>
BasicVar<T> conv_transpose2d(const BasicVar<T>& x, const BasicVar<T>& w, ConvGeom g, int out_h = -1,
                             int out_w = -1);
/// d(conv2d)/d(weight) contracted with an upstream gradient: returns (O, C, k, k).
template <typename T>
BasicVar<T> conv2d_weight_grad(const BasicVar<T>& x, const BasicVar<T>& grad_out, ConvGeom g);

// --- sampling ---
template <typename T> BasicVar<T> spatial_linear(const BasicVar<T>& x, SpatialMapPtr<T> map);
/// Bilinear sampling of (N, C, h, w) at the given source coordinates (pixel
/// centers at integer + 0.5 convention: sample (u, v) reads pixel floor(u)..),
/// one coordinate pair per output pixel of an out_h x out_w plane. Samples
/// outside the source read zero.
template <typename T>
BasicVar<T> bilinear_sample(const BasicVar<T>& x, int out_h, int out_w, std::span<const double> src_u,
                            std::span<const double> src_v);
template <typename T>
SpatialMapPtr<T> bilinear_map(int in_h, int in_w, int out_h, int out_w, std::span<const double> src_u,
                              std::span<const double> src_v);
/// Separable binomial [1,4,6,4,1]/16 blur with clamped borders, then stride-2 decimation.
template <typename T> SpatialMapPtr<T> blur_downsample_map(int in_h, int in_w);
template <typename T> BasicVar<T> blur_downsample(const BasicVar<T>& x);

// --- indexing ---
/// Flat-index gather: returns (k) values.
template <typename T> BasicVar<T> gather(const BasicVar<T>& x, std::vector<int> flat_indices);
template <typename T>
BasicVar<T> scatter(const BasicVar<T>& v, std::vector<int> flat_indices, Shape shape);

// --- normalization ---
/// Batch normalization over axis 1. In training mode uses batch statistics,
/// updates `stats`, and has a first-order-only backward. In eval mode it is
/// an affine map built from differentiable ops.
template <typename T>
BasicVar<T> batchnorm(const BasicVar<T>& x, const BasicVar<T>& gamma, const BasicVar<T>& beta,
                      BatchNormStats<T>& stats, bool training);

template <typename T> BasicVar<T> operator+(const BasicVar<T>& a, const BasicVar<T>& b) { return add(a, b); }
template <typename T> BasicVar<T> operator-(const BasicVar<T>& a, const BasicVar<T>& b) { return sub(a, b); }
template <typename T> BasicVar<T> operator*(const BasicVar<T>& a, const BasicVar<T>& b) { return mul(a, b); }
template <typename T> BasicVar<T> operator/(const BasicVar<T>& a, const BasicVar<T>& b) { return div(a, b); }

}  // namespace layoutmuse::ad
