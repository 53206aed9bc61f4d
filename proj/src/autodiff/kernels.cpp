#include "kernels.hpp"

#include <cblas.h>

#include <algorithm>

namespace layoutmuse::ad::kernels {

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                  const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

// cols is (C*k*k, Ho*Wo)
template <typename T>
void im2col(const T* x, int c, int h, int w, ConvGeom g, int ho, int wo, T* cols) {
  const int k = g.kernel;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, ConvGeom g, int ho, int wo, T* x) {
  const int k = g.kernel;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ch) * k * k + ky * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          const T* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeMismatch(std::string(what) + " must be rank 4, got " + shape_str(s));
}

}  // namespace

template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, ConvGeom g) {
  check_rank4(x.shape(), "conv2d input");
  check_rank4(w.shape(), "conv2d weight");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0);
  if (w.dim(1) != c || w.dim(2) != g.kernel || w.dim(3) != g.kernel) {
    throw ShapeMismatch("conv2d weight " + shape_str(w.shape()) + " incompatible with input " +
                        shape_str(x.shape()));
  }
  const int ho = conv_out_extent(h, g), wo = conv_out_extent(wd, g);
  if (ho <= 0 || wo <= 0) throw ShapeMismatch("conv2d output would be empty");
  BasicTensor<T> y(Shape{n, o, ho, wo});
  const int ckk = c * g.kernel * g.kernel;
  std::vector<T> cols(static_cast<std::size_t>(ckk) * ho * wo);
  for (int i = 0; i < n; ++i) {
    im2col(x.ptr() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, g, ho, wo, cols.data());
    gemm<T>(false, false, o, ho * wo, ckk, T{1}, w.ptr(), ckk, cols.data(), ho * wo, T{0},
            y.ptr() + static_cast<std::size_t>(i) * o * ho * wo, ho * wo);
  }
  return y;
}

template <typename T>
BasicTensor<T> conv_input_grad(const BasicTensor<T>& grad, const BasicTensor<T>& w, ConvGeom g, int in_h,
                               int in_w) {
  check_rank4(grad.shape(), "conv gradient");
  check_rank4(w.shape(), "conv weight");
  const int n = grad.dim(0), o = grad.dim(1), ho = grad.dim(2), wo = grad.dim(3);
  const int c = w.dim(1);
  if (w.dim(0) != o || w.dim(2) != g.kernel || w.dim(3) != g.kernel) {
    throw ShapeMismatch("transposed conv weight " + shape_str(w.shape()) + " incompatible with " +
                        shape_str(grad.shape()));
  }
  if (conv_out_extent(in_h, g) != ho || conv_out_extent(in_w, g) != wo) {
    throw ShapeMismatch("transposed conv output size inconsistent with geometry");
  }
  BasicTensor<T> x(Shape{n, c, in_h, in_w});
  const int ckk = c * g.kernel * g.kernel;
  std::vector<T> cols(static_cast<std::size_t>(ckk) * ho * wo);
  for (int i = 0; i < n; ++i) {
    gemm<T>(true, false, ckk, ho * wo, o, T{1}, w.ptr(), ckk,
            grad.ptr() + static_cast<std::size_t>(i) * o * ho * wo, ho * wo, T{0}, cols.data(), ho * wo);
    col2im(cols.data(), c, in_h, in_w, g, ho, wo, x.ptr() + static_cast<std::size_t>(i) * c * in_h * in_w);
  }
  return x;
}

template <typename T>
BasicTensor<T> conv_weight_grad(const BasicTensor<T>& x, const BasicTensor<T>& grad, ConvGeom g) {
  check_rank4(x.shape(), "conv input");
  check_rank4(grad.shape(), "conv gradient");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = grad.dim(1), ho = grad.dim(2), wo = grad.dim(3);
  if (grad.dim(0) != n || conv_out_extent(h, g) != ho || conv_out_extent(wd, g) != wo) {
    throw ShapeMismatch("conv weight gradient: input " + shape_str(x.shape()) + " vs gradient " +
                        shape_str(grad.shape()));
  }
  const int ckk = c * g.kernel * g.kernel;
  BasicTensor<T> dw(Shape{o, c, g.kernel, g.kernel});
  std::vector<T> cols(static_cast<std::size_t>(ckk) * ho * wo);
  for (int i = 0; i < n; ++i) {
    im2col(x.ptr() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, g, ho, wo, cols.data());
    gemm<T>(false, true, o, ckk, ho * wo, T{1}, grad.ptr() + static_cast<std::size_t>(i) * o * ho * wo,
            ho * wo, cols.data(), ho * wo, T{1}, dw.ptr(), ckk);
  }
  return dw;
}

template BasicTensor<float> conv_forward(const BasicTensor<float>&, const BasicTensor<float>&, ConvGeom);
template BasicTensor<double> conv_forward(const BasicTensor<double>&, const BasicTensor<double>&, ConvGeom);
template BasicTensor<float> conv_input_grad(const BasicTensor<float>&, const BasicTensor<float>&, ConvGeom,
                                            int, int);
template BasicTensor<double> conv_input_grad(const BasicTensor<double>&, const BasicTensor<double>&,
                                             ConvGeom, int, int);
template BasicTensor<float> conv_weight_grad(const BasicTensor<float>&, const BasicTensor<float>&, ConvGeom);
template BasicTensor<double> conv_weight_grad(const BasicTensor<double>&, const BasicTensor<double>&,
                                              ConvGeom);

}  // namespace layoutmuse::ad::kernels
