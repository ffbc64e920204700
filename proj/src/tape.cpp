#include "luq/tape.hpp"

#include <algorithm>
#include <cmath>

#include "luq/errors.hpp"
#include "luq/graph.hpp"
#include "luq/kernels.hpp"

namespace luq {

namespace k = kernels;

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

}  // namespace

std::size_t Tape::idx(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw ContractError("Var not on this tape");
  return static_cast<std::size_t>(v.id);
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[idx(v)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0f);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[idx(v)];
  return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0f);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}); }

Var Tape::variable(Tensor value) { return push(std::move(value), true, {}); }

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw ContractError("backward needs a scalar loss, got " + value(loss).shape().str());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!needs(loss)) return;
  grad_buffer(loss)[0] = 1.0f;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  check_finite(out, "add");
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    for (Var v : {a, b}) {
      if (!t.needs(v)) continue;
      auto gv = t.grad_buffer(v).data();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  require_same(value(a), value(b), "sub");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  check_finite(out, "sub");
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    if (t.needs(a)) {
      auto ga = t.grad_buffer(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(b)) {
      auto gb = t.grad_buffer(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  require_same(value(a), value(b), "mul");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  check_finite(out, "mul");
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    if (t.needs(a)) {
      const auto bv = t.value(b).data();
      auto ga = t.grad_buffer(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs(b)) {
      const auto av = t.value(a).data();
      auto gb = t.grad_buffer(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var Tape::scale(Var a, float s) {
  Tensor out = value(a);
  for (auto& v : out.data()) v *= s;
  check_finite(out, "scale");
  return push(std::move(out), needs(a), [a, s](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var Tape::add_scalar(Var a, float s) {
  Tensor out = value(a);
  for (auto& v : out.data()) v += s;
  check_finite(out, "add_scalar");
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    const auto x = t.value(a).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0f) ga[i] += g[i];
  });
}

Var Tape::exp(Var a) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = std::exp(v);
  check_finite(out, "exp");
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    const auto y = t.value(Var{self}).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var Tape::clamp(Var a, float lo, float hi) {
  Tensor out = value(a);
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return push(std::move(out), needs(a), [a, lo, hi](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    const auto x = t.value(a).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
  });
}

// ----------------------------------------------------------------- reductions

Var Tape::sum(Var a) {
  double s = 0.0;
  for (float v : value(a).data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  check_finite(out, "sum");
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const float g = t.out_grad(self)[0];
    for (auto& v : t.grad_buffer(a).data()) v += g;
  });
}

Var Tape::mean(Var a) {
  const float inv = 1.0f / static_cast<float>(value(a).size());
  double s = 0.0;
  for (float v : value(a).data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(value(a).size())));
  check_finite(out, "mean");
  return push(std::move(out), needs(a), [a, inv](Tape& t, int self) {
    const float g = t.out_grad(self)[0] * inv;
    for (auto& v : t.grad_buffer(a).data()) v += g;
  });
}

// ---------------------------------------------------------------------- shape

Var Tape::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(shape);
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    const auto g = t.out_grad(self).data();
    auto ga = t.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::concat(Var a, Var b) {
  const Shape& sa = value(a).shape();
  const Shape& sb = value(b).shape();
  if (sa.rank() != sb.rank() || sa.rank() == 0) throw ShapeError("concat: rank mismatch");
  const int last = sa.rank() - 1;
  for (int i = 0; i < last; ++i)
    if (sa[i] != sb[i]) throw ShapeError("concat: leading extents differ " + sa.str() + " vs " + sb.str());
  std::vector<int> dims;
  for (int i = 0; i < last; ++i) dims.push_back(sa[i]);
  dims.push_back(sa[last] + sb[last]);
  Tensor out{Shape(std::span<const int>(dims))};
  const std::size_t fa = static_cast<std::size_t>(sa[last]);
  const std::size_t fb = static_cast<std::size_t>(sb[last]);
  const std::size_t rows = value(a).size() / fa;
  const float* pa = value(a).ptr();
  const float* pb = value(b).ptr();
  float* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(pa + r * fa, fa, po + r * (fa + fb));
    std::copy_n(pb + r * fb, fb, po + r * (fa + fb) + fa);
  }
  return push(std::move(out), needs(a) || needs(b), [a, b, fa, fb, rows](Tape& t, int self) {
    const float* g = t.out_grad(self).ptr();
    if (t.needs(a)) {
      float* ga = t.grad_buffer(a).ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < fa; ++j) ga[r * fa + j] += g[r * (fa + fb) + j];
    }
    if (t.needs(b)) {
      float* gb = t.grad_buffer(b).ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < fb; ++j) gb[r * fb + j] += g[r * (fa + fb) + fa + j];
    }
  });
}

// -------------------------------------------------------------------- linear

Var Tape::matmul(Var a, Var b) {
  const Shape& sa = value(a).shape();
  const Shape& sb = value(b).shape();
  if (sa.rank() != 2 || sb.rank() != 2) throw ShapeError("matmul: operands must be rank 2");
  if (sa[1] != sb[0]) throw ShapeError("matmul: inner dimensions differ " + sa.str() + " * " + sb.str());
  const int m = sa[0], kk = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  k::parallel::gemm({false, false, m, n, kk, false}, value(a).ptr(), value(b).ptr(), out.ptr());
  check_finite(out, "matmul");
  return push(std::move(out), needs(a) || needs(b), [a, b, m, kk, n](Tape& t, int self) {
    const float* g = t.out_grad(self).ptr();
    if (t.needs(a))  // ga += g * b^T
      k::parallel::gemm({false, true, m, kk, n, true}, g, t.value(b).ptr(), t.grad_buffer(a).ptr());
    if (t.needs(b))  // gb += a^T * g
      k::parallel::gemm({true, false, kk, n, m, true}, t.value(a).ptr(), g, t.grad_buffer(b).ptr());
  });
}

Var Tape::affine(Var x, Var w, Var bias) {
  const Shape& sx = value(x).shape();
  const Shape& sw = value(w).shape();
  if (sx.rank() != 2 || sw.rank() != 2 || sx[1] != sw[0])
    throw ShapeError("affine: " + sx.str() + " * " + sw.str());
  if (value(bias).shape().rank() != 1 || value(bias).shape()[0] != sw[1])
    throw ShapeError("affine: bias must be [" + std::to_string(sw[1]) + "]");
  const int n = sx[0], in = sx[1], outf = sw[1];
  Tensor out(Shape{n, outf});
  for (int r = 0; r < n; ++r) std::copy_n(value(bias).ptr(), outf, out.ptr() + static_cast<std::size_t>(r) * outf);
  k::parallel::gemm({false, false, n, outf, in, true}, value(x).ptr(), value(w).ptr(), out.ptr());
  check_finite(out, "affine");
  return push(std::move(out), needs(x) || needs(w) || needs(bias), [x, w, bias, n, in, outf](Tape& t, int self) {
    const float* g = t.out_grad(self).ptr();
    if (t.needs(x)) k::parallel::gemm({false, true, n, in, outf, true}, g, t.value(w).ptr(), t.grad_buffer(x).ptr());
    if (t.needs(w)) k::parallel::gemm({true, false, in, outf, n, true}, t.value(x).ptr(), g, t.grad_buffer(w).ptr());
    if (t.needs(bias)) {
      float* gb = t.grad_buffer(bias).ptr();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < outf; ++j) gb[j] += g[static_cast<std::size_t>(r) * outf + j];
    }
  });
}

Var Tape::conv2d(Var x, Var kernel, Var bias, int stride) {
  const Shape& sx = value(x).shape();
  const Shape& sk = value(kernel).shape();
  if (sk.rank() != 4 || sk[2] != sk[3]) throw ShapeError("conv2d: kernel must be [Co x Ci x k x k]");
  if (sk[2] % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const bool batched = sx.rank() == 4;
  if (!batched && sx.rank() != 3) throw ShapeError("conv2d: input must be [N x C x H x W] or [C x H x W]");
  k::ConvGeom g;
  g.batch = batched ? sx[0] : 1;
  g.in_channels = sx[batched ? 1 : 0];
  g.height = sx[batched ? 2 : 1];
  g.width = sx[batched ? 3 : 2];
  g.out_channels = sk[0];
  g.kernel = sk[2];
  g.stride = stride;
  if (sk[1] != g.in_channels) throw ShapeError("conv2d: kernel expects " + std::to_string(sk[1]) + " channels");
  const bool has_bias = bias.valid();
  if (has_bias && (value(bias).shape().rank() != 1 || value(bias).shape()[0] != g.out_channels))
    throw ShapeError("conv2d: bias must be [Co]");
  Tensor out(batched ? Shape{g.batch, g.out_channels, g.out_height(), g.out_width()}
                     : Shape{g.out_channels, g.out_height(), g.out_width()});
  k::parallel::conv2d_forward(g, value(x).ptr(), value(kernel).ptr(), has_bias ? value(bias).ptr() : nullptr,
                              out.ptr());
  check_finite(out, "conv2d");
  const bool req = needs(x) || needs(kernel) || (has_bias && needs(bias));
  return push(std::move(out), req, [x, kernel, bias, g, has_bias](Tape& t, int self) {
    const float* gy = t.out_grad(self).ptr();
    if (t.needs(x)) k::parallel::conv2d_backward_input(g, t.value(kernel).ptr(), gy, t.grad_buffer(x).ptr());
    const bool want_b = has_bias && t.needs(bias);
    if (t.needs(kernel) || want_b) {
      // The weight kernel writes both buffers; route an unwanted one to scratch.
      Tensor scratch_w;
      float* gw = nullptr;
      if (t.needs(kernel)) {
        gw = t.grad_buffer(kernel).ptr();
      } else {
        scratch_w = Tensor(t.value(kernel).shape(), 0.0f);
        gw = scratch_w.ptr();
      }
      k::parallel::conv2d_backward_weight(g, t.value(x).ptr(), gy, gw, want_b ? t.grad_buffer(bias).ptr() : nullptr);
    }
  });
}

Var Tape::bilinear_sample(Var fmap, Var coords) {
  const Shape& sf = value(fmap).shape();
  const Shape& sc = value(coords).shape();
  if (sf.rank() != 4) throw ShapeError("bilinear_sample: fmap must be [N x C x H x W]");
  if (sc.rank() != 3 || sc[2] != 2) throw ShapeError("bilinear_sample: coords must be [N x M x 2]");
  if (sf[0] != 1 && sf[0] != sc[0]) throw ShapeError("bilinear_sample: fmap batch must be 1 or match coords");
  k::SampleGeom g{sc[0], sf[0], sf[1], sf[2], sf[3], sc[1]};
  Tensor out(Shape{g.batch, g.points, g.channels});
  k::parallel::bilinear_forward(g, value(fmap).ptr(), value(coords).ptr(), out.ptr());
  check_finite(out, "bilinear_sample");
  return push(std::move(out), needs(fmap) || needs(coords), [fmap, coords, g](Tape& t, int self) {
    k::parallel::bilinear_backward(g, t.value(fmap).ptr(), t.value(coords).ptr(), t.out_grad(self).ptr(),
                                   t.needs(fmap) ? t.grad_buffer(fmap).ptr() : nullptr,
                                   t.needs(coords) ? t.grad_buffer(coords).ptr() : nullptr);
  });
}

Var Tape::graph_conv(Var h, const NormalizedAdjacency& adj, Var w, Var bias) {
  const Shape& sh = value(h).shape();
  const Shape& sw = value(w).shape();
  const bool batched = sh.rank() == 3;
  if (!batched && sh.rank() != 2) throw ShapeError("graph_conv: features must be [N x M x F] or [M x F]");
  const int n = batched ? sh[0] : 1;
  const int m = sh[batched ? 1 : 0];
  const int fin = sh[batched ? 2 : 1];
  if (adj.size() != m) throw ShapeError("graph_conv: adjacency is " + adj.matrix.shape().str() + " for " +
                                        std::to_string(m) + " nodes");
  if (sw.rank() != 2 || sw[0] != fin) throw ShapeError("graph_conv: weight must be [" + std::to_string(fin) + " x F]");
  const int fout = sw[1];
  if (value(bias).shape().rank() != 1 || value(bias).shape()[0] != fout) throw ShapeError("graph_conv: bias shape");

  // Per sample: proj = h W, out = A proj + b.
  const std::size_t hs = static_cast<std::size_t>(m) * fin;
  const std::size_t os = static_cast<std::size_t>(m) * fout;
  Tensor proj(Shape{n * m, fout});
  k::parallel::gemm({false, false, n * m, fout, fin, false}, value(h).ptr(), value(w).ptr(), proj.ptr());
  Tensor out(batched ? Shape{n, m, fout} : Shape{m, fout});
  const float* a = adj.matrix.ptr();
  for (int s = 0; s < n; ++s) {
    float* o = out.ptr() + s * os;
    for (int i = 0; i < m; ++i) std::copy_n(value(bias).ptr(), fout, o + static_cast<std::size_t>(i) * fout);
    k::parallel::gemm({false, false, m, fout, m, true}, a, proj.ptr() + s * os, o);
  }
  check_finite(out, "graph_conv");
  Tensor adj_copy = adj.matrix;
  return push(std::move(out), needs(h) || needs(w) || needs(bias),
              [h, w, bias, n, m, fin, fout, hs, os, adj_copy = std::move(adj_copy)](Tape& t, int self) {
                const float* g = t.out_grad(self).ptr();
                // gproj = A^T g per sample.
                Tensor gproj(Shape{n * m, fout});
                for (int s = 0; s < n; ++s)
                  k::parallel::gemm({true, false, m, fout, m, false}, adj_copy.ptr(), g + s * os, gproj.ptr() + s * os);
                if (t.needs(h))
                  k::parallel::gemm({false, true, n * m, fin, fout, true}, gproj.ptr(), t.value(w).ptr(),
                                    t.grad_buffer(h).ptr());
                if (t.needs(w))
                  k::parallel::gemm({true, false, fin, fout, n * m, true}, t.value(h).ptr(), gproj.ptr(),
                                    t.grad_buffer(w).ptr());
                if (t.needs(bias)) {
                  float* gb = t.grad_buffer(bias).ptr();
                  for (std::size_t r = 0; r < static_cast<std::size_t>(n) * m; ++r)
                    for (int j = 0; j < fout; ++j) gb[j] += g[r * fout + j];
                }
                (void)hs;
              });
}

}  // namespace luq
