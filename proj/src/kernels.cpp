#include "luq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef LUQ_HAVE_OPENMP
#include <omp.h>
#endif

namespace luq::kernels {

namespace {

// One row of C. Both dispatchers call exactly this, so per-element
// accumulation order never depends on how rows are distributed.
void gemm_row(const Gemm& g, const float* a, const float* b, float* c, int i) {
  // Double row accumulator: each output element is rounded to f32 once.
  thread_local std::vector<double> acc;
  acc.assign(static_cast<std::size_t>(g.n), 0.0);
  float* crow = c + static_cast<std::size_t>(i) * g.n;
  auto a_at = [&](int p) {
    return g.trans_a ? a[static_cast<std::size_t>(p) * g.m + i] : a[static_cast<std::size_t>(i) * g.k + p];
  };
  if (!g.trans_b) {
    for (int p = 0; p < g.k; ++p) {
      const double aip = a_at(p);
      if (aip == 0.0) continue;
      const float* brow = b + static_cast<std::size_t>(p) * g.n;
      for (int j = 0; j < g.n; ++j) acc[j] += aip * brow[j];
    }
  } else {
    for (int j = 0; j < g.n; ++j) {
      const float* bcol = b + static_cast<std::size_t>(j) * g.k;
      double s = 0.0;
      for (int p = 0; p < g.k; ++p) s += static_cast<double>(a_at(p)) * bcol[p];
      acc[j] = s;
    }
  }
  for (int j = 0; j < g.n; ++j) crow[j] = static_cast<float>(g.accumulate ? crow[j] + acc[j] : acc[j]);
}

void conv_forward_plane(const ConvGeom& g, const float* x, const float* w, const float* bias, float* y, int plane) {
  const int n = plane / g.out_channels;
  const int co = plane % g.out_channels;
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int pad = g.pad();
  const int kk = g.kernel;
  float* out = y + static_cast<std::size_t>(plane) * oh * ow;
  std::fill(out, out + oh * ow, bias ? bias[co] : 0.0f);
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const float* in = x + (static_cast<std::size_t>(n) * g.in_channels + ci) * g.height * g.width;
    const float* wk = w + (static_cast<std::size_t>(co) * g.in_channels + ci) * kk * kk;
    for (int ky = 0; ky < kk; ++ky) {
      for (int kx = 0; kx < kk; ++kx) {
        const float wv = wk[ky * kk + kx];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          if (iy < 0 || iy >= g.height) continue;
          const float* irow = in + static_cast<std::size_t>(iy) * g.width;
          float* orow = out + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride + kx - pad;
            if (ix < 0 || ix >= g.width) continue;
            orow[ox] += wv * irow[ix];
          }
        }
      }
    }
  }
}

void conv_backward_input_plane(const ConvGeom& g, const float* w, const float* gy, float* gx, int plane) {
  const int n = plane / g.in_channels;
  const int ci = plane % g.in_channels;
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int pad = g.pad();
  const int kk = g.kernel;
  float* gin = gx + static_cast<std::size_t>(plane) * g.height * g.width;
  for (int co = 0; co < g.out_channels; ++co) {
    const float* gout = gy + (static_cast<std::size_t>(n) * g.out_channels + co) * oh * ow;
    const float* wk = w + (static_cast<std::size_t>(co) * g.in_channels + ci) * kk * kk;
    for (int ky = 0; ky < kk; ++ky) {
      for (int kx = 0; kx < kk; ++kx) {
        const float wv = wk[ky * kk + kx];
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          if (iy < 0 || iy >= g.height) continue;
          float* grow = gin + static_cast<std::size_t>(iy) * g.width;
          const float* orow = gout + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride + kx - pad;
            if (ix < 0 || ix >= g.width) continue;
            grow[ix] += wv * orow[ox];
          }
        }
      }
    }
  }
}

void conv_backward_weight_channel(const ConvGeom& g, const float* x, const float* gy, float* gw, float* gbias,
                                  int co) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int pad = g.pad();
  const int kk = g.kernel;
  if (gbias) {
    double acc = 0.0;
    for (int n = 0; n < g.batch; ++n) {
      const float* gout = gy + (static_cast<std::size_t>(n) * g.out_channels + co) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) acc += gout[i];
    }
    gbias[co] = static_cast<float>(gbias[co] + acc);
  }
  for (int ci = 0; ci < g.in_channels; ++ci) {
    float* gwk = gw + (static_cast<std::size_t>(co) * g.in_channels + ci) * kk * kk;
    for (int ky = 0; ky < kk; ++ky) {
      for (int kx = 0; kx < kk; ++kx) {
        double acc = 0.0;
        for (int n = 0; n < g.batch; ++n) {
          const float* in = x + (static_cast<std::size_t>(n) * g.in_channels + ci) * g.height * g.width;
          const float* gout = gy + (static_cast<std::size_t>(n) * g.out_channels + co) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride + ky - pad;
            if (iy < 0 || iy >= g.height) continue;
            const float* irow = in + static_cast<std::size_t>(iy) * g.width;
            const float* orow = gout + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride + kx - pad;
              if (ix < 0 || ix >= g.width) continue;
              acc += static_cast<double>(irow[ix]) * orow[ox];
            }
          }
        }
        gwk[ky * kk + kx] = static_cast<float>(gwk[ky * kk + kx] + acc);
      }
    }
  }
}

// Clamped pixel-space position plus interpolation weights for one point.
struct Tap {
  int x0, y0;
  float wx, wy;
  bool clamped_x, clamped_y;
};

Tap make_tap(const SampleGeom& g, float cx, float cy) {
  Tap t{};
  t.clamped_x = !(cx >= 0.0f && cx <= 1.0f);
  t.clamped_y = !(cy >= 0.0f && cy <= 1.0f);
  const float px = std::clamp(cx, 0.0f, 1.0f) * static_cast<float>(g.width - 1);
  const float py = std::clamp(cy, 0.0f, 1.0f) * static_cast<float>(g.height - 1);
  t.x0 = std::min(static_cast<int>(std::floor(px)), std::max(g.width - 2, 0));
  t.y0 = std::min(static_cast<int>(std::floor(py)), std::max(g.height - 2, 0));
  t.wx = g.width > 1 ? px - static_cast<float>(t.x0) : 0.0f;
  t.wy = g.height > 1 ? py - static_cast<float>(t.y0) : 0.0f;
  return t;
}

const float* fmap_plane(const SampleGeom& g, const float* fmap, int n, int c) {
  const int fn = g.fmap_batch == 1 ? 0 : n;
  return fmap + (static_cast<std::size_t>(fn) * g.channels + c) * g.height * g.width;
}

void bilinear_forward_item(const SampleGeom& g, const float* fmap, const float* coords, float* out, int n) {
  const int x1off = g.width > 1 ? 1 : 0;
  const int y1off = g.height > 1 ? g.width : 0;
  for (int m = 0; m < g.points; ++m) {
    const float* cp = coords + (static_cast<std::size_t>(n) * g.points + m) * 2;
    const Tap t = make_tap(g, cp[0], cp[1]);
    float* o = out + (static_cast<std::size_t>(n) * g.points + m) * g.channels;
    for (int c = 0; c < g.channels; ++c) {
      const float* f = fmap_plane(g, fmap, n, c) + t.y0 * g.width + t.x0;
      const float top = f[0] * (1.0f - t.wx) + f[x1off] * t.wx;
      const float bot = f[y1off] * (1.0f - t.wx) + f[y1off + x1off] * t.wx;
      o[c] = top * (1.0f - t.wy) + bot * t.wy;
    }
  }
}

void bilinear_backward_channel(const SampleGeom& g, const float* coords, const float* gout, float* gfmap, int c) {
  const int x1off = g.width > 1 ? 1 : 0;
  const int y1off = g.height > 1 ? g.width : 0;
  for (int n = 0; n < g.batch; ++n) {
    const int fn = g.fmap_batch == 1 ? 0 : n;
    float* gf = gfmap + (static_cast<std::size_t>(fn) * g.channels + c) * g.height * g.width;
    for (int m = 0; m < g.points; ++m) {
      const float* cp = coords + (static_cast<std::size_t>(n) * g.points + m) * 2;
      const Tap t = make_tap(g, cp[0], cp[1]);
      const float go = gout[(static_cast<std::size_t>(n) * g.points + m) * g.channels + c];
      float* f = gf + t.y0 * g.width + t.x0;
      f[0] += go * (1.0f - t.wx) * (1.0f - t.wy);
      f[x1off] += go * t.wx * (1.0f - t.wy);
      f[y1off] += go * (1.0f - t.wx) * t.wy;
      f[y1off + x1off] += go * t.wx * t.wy;
    }
  }
}

void bilinear_backward_coords_item(const SampleGeom& g, const float* fmap, const float* coords, const float* gout,
                                   float* gcoords, int n) {
  const int x1off = g.width > 1 ? 1 : 0;
  const int y1off = g.height > 1 ? g.width : 0;
  for (int m = 0; m < g.points; ++m) {
    const std::size_t item = static_cast<std::size_t>(n) * g.points + m;
    const Tap t = make_tap(g, coords[item * 2], coords[item * 2 + 1]);
    float dx = 0.0f;
    float dy = 0.0f;
    for (int c = 0; c < g.channels; ++c) {
      const float* f = fmap_plane(g, fmap, n, c) + t.y0 * g.width + t.x0;
      const float go = gout[item * g.channels + c];
      dx += go * ((f[x1off] - f[0]) * (1.0f - t.wy) + (f[y1off + x1off] - f[y1off]) * t.wy);
      dy += go * ((f[y1off] - f[0]) * (1.0f - t.wx) + (f[y1off + x1off] - f[x1off]) * t.wx);
    }
    if (!t.clamped_x) gcoords[item * 2] += dx * static_cast<float>(g.width - 1);
    if (!t.clamped_y) gcoords[item * 2 + 1] += dy * static_cast<float>(g.height - 1);
  }
}

}  // namespace

namespace serial {

void gemm(const Gemm& g, const float* a, const float* b, float* c) {
  for (int i = 0; i < g.m; ++i) gemm_row(g, a, b, c, i);
}

void conv2d_forward(const ConvGeom& g, const float* x, const float* w, const float* bias, float* y) {
  for (int p = 0; p < g.batch * g.out_channels; ++p) conv_forward_plane(g, x, w, bias, y, p);
}

void conv2d_backward_input(const ConvGeom& g, const float* w, const float* gy, float* gx) {
  for (int p = 0; p < g.batch * g.in_channels; ++p) conv_backward_input_plane(g, w, gy, gx, p);
}

void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw, float* gbias) {
  for (int co = 0; co < g.out_channels; ++co) conv_backward_weight_channel(g, x, gy, gw, gbias, co);
}

void bilinear_forward(const SampleGeom& g, const float* fmap, const float* coords, float* out) {
  for (int n = 0; n < g.batch; ++n) bilinear_forward_item(g, fmap, coords, out, n);
}

void bilinear_backward(const SampleGeom& g, const float* fmap, const float* coords, const float* gout, float* gfmap,
                       float* gcoords) {
  if (gfmap)
    for (int c = 0; c < g.channels; ++c) bilinear_backward_channel(g, coords, gout, gfmap, c);
  if (gcoords)
    for (int n = 0; n < g.batch; ++n) bilinear_backward_coords_item(g, fmap, coords, gout, gcoords, n);
}

}  // namespace serial

namespace parallel {

void gemm(const Gemm& g, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static) if (static_cast<long>(g.m) * g.n * g.k > 32768)
  for (int i = 0; i < g.m; ++i) gemm_row(g, a, b, c, i);
}

void conv2d_forward(const ConvGeom& g, const float* x, const float* w, const float* bias, float* y) {
  const int planes = g.batch * g.out_channels;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) conv_forward_plane(g, x, w, bias, y, p);
}

void conv2d_backward_input(const ConvGeom& g, const float* w, const float* gy, float* gx) {
  const int planes = g.batch * g.in_channels;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) conv_backward_input_plane(g, w, gy, gx, p);
}

void conv2d_backward_weight(const ConvGeom& g, const float* x, const float* gy, float* gw, float* gbias) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < g.out_channels; ++co) conv_backward_weight_channel(g, x, gy, gw, gbias, co);
}

void bilinear_forward(const SampleGeom& g, const float* fmap, const float* coords, float* out) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < g.batch; ++n) bilinear_forward_item(g, fmap, coords, out, n);
}

void bilinear_backward(const SampleGeom& g, const float* fmap, const float* coords, const float* gout, float* gfmap,
                       float* gcoords) {
  if (gfmap) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.channels; ++c) bilinear_backward_channel(g, coords, gout, gfmap, c);
  }
  if (gcoords) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < g.batch; ++n) bilinear_backward_coords_item(g, fmap, coords, gout, gcoords, n);
  }
}

}  // namespace parallel

int max_threads() {
#ifdef LUQ_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace luq::kernels
