#pragma once

#include "layoutmuse/autodiff/ops.hpp"

namespace layoutmuse::ad::kernels {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, ConvGeom g);

/// Adjoint of conv_forward w.r.t. its input; `w` is (O, C, k, k), `grad` is (N, O, Ho, Wo).
template <typename T>
BasicTensor<T> conv_input_grad(const BasicTensor<T>& grad, const BasicTensor<T>& w, ConvGeom g, int in_h,
                               int in_w);

template <typename T>
BasicTensor<T> conv_weight_grad(const BasicTensor<T>& x, const BasicTensor<T>& grad, ConvGeom g);

inline int conv_out_extent(int in, ConvGeom g) { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

}  // namespace layoutmuse::ad::kernels
