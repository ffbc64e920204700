#pragma once

#include <cstddef>

// Dense numeric kernels behind the autodiff tape.
//
// Each kernel exists twice: `serial::` is the reference, `parallel::` splits
// independent output planes/rows across OpenMP threads. Every output element
// is accumulated in the same order in both, so the results are bit-identical
// and independent of the thread count.

namespace luq::kernels {

// C[m x n] (+)= op(A) * op(B), op(X) = X or X^T. Row-major, no aliasing.
struct Gemm {
  bool trans_a = false;
  bool trans_b = false;
  int m = 0;
  int n = 0;
  int k = 0;
  bool accumulate = false;
};

// Square kernel with "same" padding (k-1)/2, cross-correlation convention.
struct ConvGeom {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;
  int stride = 1;

  int pad() const { return (kernel - 1) / 2; }
  int out_height() const { return (height + stride - 1) / stride; }
  int out_width() const { return (width + stride - 1) / stride; }
};

struct SampleGeom {
  int batch = 1;        // coordinate batch
  int fmap_batch = 1;   // 1 (broadcast) or == batch
  int channels = 1;
  int height = 1;
  int width = 1;
  int points = 1;
};

namespace serial {
void gemm(const Gemm& g, const float* a, const float* b, float* c);
void conv2d_forward(const ConvGeom& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward_input(const ConvGeom& g, const float* w, const float* gy, float* gx);
void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw, float* gbias);
void bilinear_forward(const SampleGeom& g, const float* fmap, const float* coords, float* out);
void bilinear_backward(const SampleGeom& g, const float* fmap, const float* coords, const float* gout,
                       float* gfmap, float* gcoords);
}  // namespace serial

namespace parallel {
void gemm(const Gemm& g, const float* a, const float* b, float* c);
void conv2d_forward(const ConvGeom& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward_input(const ConvGeom& g, const float* w, const float* gy, float* gx);
void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw, float* gbias);
void bilinear_forward(const SampleGeom& g, const float* fmap, const float* coords, float* out);
void bilinear_backward(const SampleGeom& g, const float* fmap, const float* coords, const float* gout,
                       float* gfmap, float* gcoords);
}  // namespace parallel

// Thread count the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace luq::kernels
