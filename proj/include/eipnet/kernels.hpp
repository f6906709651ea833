#pragma once

// Raw forward/backward kernels over Tensor storage. The tape in autodiff.hpp
// is the only intended caller; the functions here do not validate shapes.

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "eipnet/tensor.hpp"

namespace eipnet::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

struct Window {
  int k;
  int stride;
  int pad;
  int out(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies
// inside [0, w).
inline void valid_span(int w, int wo, int stride, int pad, int kx, int& lo, int& hi) {
  const int off = kx - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = w - off <= 0 ? 0 : std::min(wo, (w - off - 1) / stride + 1);
  if (hi < lo) hi = lo;
}

/// Unfolds output rows [oy0, oy1) of one (C, H, W) item into a
/// (C*k*k, (oy1-oy0)*Wo) column matrix; zero padding. oy1 < 0 means all rows.
template <class T>
void im2col(const T* in, int channels, int h, int w, Window win, T* col, int oy0 = 0, int oy1 = -1) {
  const int wo = win.out(w);
  if (oy1 < 0) oy1 = win.out(h);
  const int ho = oy1 - oy0;
  for (int c = 0; c < channels; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < win.k; ++ky) {
      for (int kx = 0; kx < win.k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * win.k + ky) * win.k + kx) * ho * wo;
        int lo, hi;
        valid_span(w, wo, win.stride, win.pad, kx, lo, hi);
        const int off = kx - win.pad;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * win.stride - win.pad + ky;
          T* row = dst + static_cast<std::size_t>(oy - oy0) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * w + off;
          std::fill(row, row + lo, T(0));
          if (win.stride == 1) {
            std::copy(srow + lo, srow + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = srow[ox * win.stride];
          }
          std::fill(row + hi, row + wo, T(0));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back into an image, accumulating.
template <class T>
void col2im(const T* col, int channels, int h, int w, Window win, T* out, int oy0 = 0, int oy1 = -1) {
  const int wo = win.out(w);
  if (oy1 < 0) oy1 = win.out(h);
  const int ho = oy1 - oy0;
  for (int c = 0; c < channels; ++c) {
    T* dst = out + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < win.k; ++ky) {
      for (int kx = 0; kx < win.k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(c) * win.k + ky) * win.k + kx) * ho * wo;
        int lo, hi;
        valid_span(w, wo, win.stride, win.pad, kx, lo, hi);
        const int off = kx - win.pad;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * win.stride - win.pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * w + off;
          const T* srow = src + static_cast<std::size_t>(oy - oy0) * wo;
          if (win.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) drow[ox] += srow[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox * win.stride] += srow[ox];
          }
        }
      }
    }
  }
}

// Output rows per column tile, sized so a tile of the column matrix stays
// cache resident.
inline int tile_rows(int kdim, int wo, int ho) {
  constexpr int kTileElems = 1 << 18;
  return std::clamp(kTileElems / std::max(1, kdim * wo), 1, ho);
}

template <class T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using StridedConstMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Window win) {
  const Shape xs = x.shape();
  const int out_c = weight.shape().n;
  const int kdim = xs.c * win.k * win.k;
  const int ho = win.out(xs.h);
  const int wo = win.out(xs.w);
  const int pixels = ho * wo;
  Tensor<T> out({xs.n, out_c, ho, wo});
  const bool pointwise = win.k == 1 && win.stride == 1 && win.pad == 0;
  const int rows = tile_rows(kdim, wo, ho);
  AlignedVector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * rows * wo);
  MapConstMat<T> wmat(weight.ptr(), out_c, kdim);
  for (int n = 0; n < xs.n; ++n) {
    MapMat<T> omat(out.item(n), out_c, pixels);
    if (pointwise) {
      omat.noalias() = wmat * MapConstMat<T>(x.item(n), kdim, pixels);
    } else {
      for (int y0 = 0; y0 < ho; y0 += rows) {
        const int y1 = std::min(ho, y0 + rows);
        const int tp = (y1 - y0) * wo;
        im2col(x.item(n), xs.c, xs.h, xs.w, win, col.data(), y0, y1);
        StridedMat<T>(out.item(n) + static_cast<std::size_t>(y0) * wo, out_c, tp, Eigen::OuterStride<>(pixels))
            .noalias() = wmat * MapConstMat<T>(col.data(), kdim, tp);
      }
    }
    for (int o = 0; o < out_c; ++o) omat.row(o).array() += bias[o];
  }
  return out;
}

/// Accumulates into whichever of gx / gw / gb are non-null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& gout, Window win, Tensor<T>* gx,
                     Tensor<T>* gw, Tensor<T>* gb) {
  const Shape xs = x.shape();
  const int out_c = weight.shape().n;
  const int kdim = xs.c * win.k * win.k;
  const int ho = gout.shape().h;
  const int wo = gout.shape().w;
  const int pixels = ho * wo;
  const bool pointwise = win.k == 1 && win.stride == 1 && win.pad == 0;
  MapConstMat<T> wmat(weight.ptr(), out_c, kdim);
  if (pointwise) {
    for (int n = 0; n < xs.n; ++n) {
      MapConstMat<T> g(gout.item(n), out_c, pixels);
      MapConstMat<T> xm(x.item(n), kdim, pixels);
      if (gw) MapMat<T>(gw->ptr(), out_c, kdim).noalias() += g * xm.transpose();
      if (gb)
        for (int o = 0; o < out_c; ++o) (*gb)[o] += g.row(o).sum();
      if (gx) MapMat<T>(gx->item(n), kdim, pixels).noalias() += wmat.transpose() * g;
    }
    return;
  }
  // With few output channels the input gradient is cheaper as a stride-1
  // convolution of gout with the flipped, transposed kernel.
  const bool flip = gx && win.stride == 1 && out_c < xs.c;
  if (flip) {
    const int k = win.k;
    Tensor<T> wf({xs.c, out_c, k, k});
    for (int o = 0; o < out_c; ++o)
      for (int c = 0; c < xs.c; ++c)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            wf.ptr()[((static_cast<std::size_t>(c) * out_c + o) * k + ky) * k + kx] =
                weight.ptr()[((static_cast<std::size_t>(o) * xs.c + c) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
    const Window fw{k, 1, k - 1 - win.pad};
    const int fdim = out_c * k * k;
    const int frows = tile_rows(fdim, xs.w, xs.h);
    AlignedVector<T> fcol(static_cast<std::size_t>(fdim) * frows * xs.w);
    MapConstMat<T> wfm(wf.ptr(), xs.c, fdim);
    const int xp = xs.h * xs.w;
    for (int n = 0; n < xs.n; ++n) {
      for (int y0 = 0; y0 < xs.h; y0 += frows) {
        const int y1 = std::min(xs.h, y0 + frows);
        const int tp = (y1 - y0) * xs.w;
        im2col(gout.item(n), out_c, ho, wo, fw, fcol.data(), y0, y1);
        StridedMat<T>(gx->item(n) + static_cast<std::size_t>(y0) * xs.w, xs.c, tp, Eigen::OuterStride<>(xp))
            .noalias() += wfm * MapConstMat<T>(fcol.data(), fdim, tp);
      }
    }
    gx = nullptr;
  }
  const int rows = tile_rows(kdim, wo, ho);
  AlignedVector<T> col(gw ? static_cast<std::size_t>(kdim) * rows * wo : 0);
  AlignedVector<T> dcol(gx ? static_cast<std::size_t>(kdim) * rows * wo : 0);
  for (int n = 0; n < xs.n; ++n) {
    if (gb) {
      MapConstMat<T> g(gout.item(n), out_c, pixels);
      for (int o = 0; o < out_c; ++o) (*gb)[o] += g.row(o).sum();
    }
    for (int y0 = 0; y0 < ho; y0 += rows) {
      const int y1 = std::min(ho, y0 + rows);
      const int tp = (y1 - y0) * wo;
      StridedConstMat<T> g(gout.item(n) + static_cast<std::size_t>(y0) * wo, out_c, tp, Eigen::OuterStride<>(pixels));
      if (gw) {
        im2col(x.item(n), xs.c, xs.h, xs.w, win, col.data(), y0, y1);
        MapMat<T>(gw->ptr(), out_c, kdim).noalias() += g * MapConstMat<T>(col.data(), kdim, tp).transpose();
      }
      if (gx) {
        MapMat<T>(dcol.data(), kdim, tp).noalias() = wmat.transpose() * g;
        col2im(dcol.data(), xs.c, xs.h, xs.w, win, gx->item(n), y0, y1);
      }
    }
  }
}

/// Transposed convolution with weight (inC, outC, k, k); output is the
/// adjoint of a strided conv, so it is col2im applied to W^T x.
template <class T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Window win) {
  const Shape xs = x.shape();
  const int out_c = weight.shape().c;
  const int oh = (xs.h - 1) * win.stride - 2 * win.pad + win.k;
  const int ow = (xs.w - 1) * win.stride - 2 * win.pad + win.k;
  const int cols = out_c * win.k * win.k;
  const int pixels = xs.h * xs.w;
  Tensor<T> out({xs.n, out_c, oh, ow});
  AlignedVector<T> colbuf(static_cast<std::size_t>(cols) * pixels);
  MapConstMat<T> wmat(weight.ptr(), xs.c, cols);
  for (int n = 0; n < xs.n; ++n) {
    MapMat<T>(colbuf.data(), cols, pixels).noalias() = wmat.transpose() * MapConstMat<T>(x.item(n), xs.c, pixels);
    col2im(colbuf.data(), out_c, oh, ow, win, out.item(n));
    for (int o = 0; o < out_c; ++o) {
      T* p = out.plane(n, o);
      for (std::size_t i = 0; i < out.shape().plane(); ++i) p[i] += bias[o];
    }
  }
  return out;
}

template <class T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& gout, Window win,
                               Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const Shape xs = x.shape();
  const Shape gs = gout.shape();
  const int out_c = weight.shape().c;
  const int cols = out_c * win.k * win.k;
  const int pixels = xs.h * xs.w;
  AlignedVector<T> dcol(static_cast<std::size_t>(cols) * pixels);
  MapConstMat<T> wmat(weight.ptr(), xs.c, cols);
  for (int n = 0; n < xs.n; ++n) {
    if (gb) {
      for (int o = 0; o < out_c; ++o) {
        const T* p = gout.plane(n, o);
        T acc = 0;
        for (std::size_t i = 0; i < gs.plane(); ++i) acc += p[i];
        (*gb)[o] += acc;
      }
    }
    if (!gx && !gw) continue;
    im2col(gout.item(n), out_c, gs.h, gs.w, win, dcol.data());
    MapConstMat<T> d(dcol.data(), cols, pixels);
    if (gx) MapMat<T>(gx->item(n), xs.c, pixels).noalias() += wmat * d;
    if (gw) MapMat<T>(gw->ptr(), xs.c, cols).noalias() += MapConstMat<T>(x.item(n), xs.c, pixels) * d.transpose();
  }
}

// Copies `n` samples spaced by `stride` into buf with `before` / `after`
// replicated samples on either side.
template <class T>
void load_padded(const T* src, std::ptrdiff_t stride, int n, int before, int after, T* buf) {
  for (int i = 0; i < before; ++i) buf[i] = src[0];
  for (int i = 0; i < n; ++i) buf[before + i] = src[i * stride];
  for (int i = 0; i < after; ++i) buf[before + n + i] = src[(n - 1) * stride];
}

/// Stride-1 box mean over a k x k window with replicate padding, computed
/// separably. Each pass is written as `center + mean(neighbour - center)` so
/// that a constant plane maps to itself exactly.
template <class T>
void box_mean_plane(const T* in, int h, int w, int k, T* out, AlignedVector<T>& tmp) {
  const int before = (k - 1) / 2;
  const int after = k - 1 - before;
  const T inv = T(1) / static_cast<T>(k);
  tmp.resize(static_cast<std::size_t>(h) * w + static_cast<std::size_t>(std::max(h, w) + k) * (w + 1));
  T* mid = tmp.data();
  T* buf = mid + static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    load_padded(in + static_cast<std::size_t>(y) * w, 1, w, before, after, buf);
    T* trow = mid + static_cast<std::size_t>(y) * w;
    const T* center = buf + before;
    std::fill(trow, trow + w, T(0));
    for (int d = 0; d < k; ++d)
      for (int x = 0; x < w; ++x) trow[x] += buf[x + d] - center[x];
    for (int x = 0; x < w; ++x) trow[x] = center[x] + trow[x] * inv;
  }
  // Vertical pass over whole padded rows so the inner loop runs along x.
  T* rows = buf;  // (h + k - 1) x w
  for (int y = 0; y < h + k - 1; ++y) {
    const int sy = std::clamp(y - before, 0, h - 1);
    std::copy(mid + static_cast<std::size_t>(sy) * w, mid + static_cast<std::size_t>(sy + 1) * w,
              rows + static_cast<std::size_t>(y) * w);
  }
  for (int y = 0; y < h; ++y) {
    const T* center = rows + static_cast<std::size_t>(y + before) * w;
    T* orow = out + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) orow[x] = 0;
    for (int d = 0; d < k; ++d) {
      const T* r = rows + static_cast<std::size_t>(y + d) * w;
      for (int x = 0; x < w; ++x) orow[x] += r[x] - center[x];
    }
    for (int x = 0; x < w; ++x) orow[x] = center[x] + orow[x] * inv;
  }
}

/// Adjoint of box_mean_plane, accumulated into gin.
template <class T>
void box_mean_plane_backward(const T* gout, int h, int w, int k, T* gin, AlignedVector<T>& tmp) {
  const int before = (k - 1) / 2;
  const int after = k - 1 - before;
  const T inv = T(1) / static_cast<T>(k);
  // Padded accumulators: rows [0, h + k - 1), then one padded line.
  tmp.assign(static_cast<std::size_t>(h + k - 1) * w + static_cast<std::size_t>(w + k), T(0));
  T* rows = tmp.data();
  T* line = rows + static_cast<std::size_t>(h + k - 1) * w;
  for (int y = 0; y < h; ++y) {
    const T* g = gout + static_cast<std::size_t>(y) * w;
    for (int d = 0; d < k; ++d) {
      T* r = rows + static_cast<std::size_t>(y + d) * w;
      for (int x = 0; x < w; ++x) r[x] += g[x] * inv;
    }
  }
  // Fold the padding rows back onto the edge rows.
  for (int y = 0; y < before; ++y)
    for (int x = 0; x < w; ++x) rows[static_cast<std::size_t>(before) * w + x] += rows[static_cast<std::size_t>(y) * w + x];
  for (int y = h + before; y < h + before + after; ++y)
    for (int x = 0; x < w; ++x)
      rows[static_cast<std::size_t>(h - 1 + before) * w + x] += rows[static_cast<std::size_t>(y) * w + x];
  for (int y = 0; y < h; ++y) {
    const T* r = rows + static_cast<std::size_t>(y + before) * w;
    std::fill(line, line + w + k - 1, T(0));
    for (int d = 0; d < k; ++d)
      for (int x = 0; x < w; ++x) line[x + d] += r[x] * inv;
    T* grow = gin + static_cast<std::size_t>(y) * w;
    for (int i = 0; i < before; ++i) grow[0] += line[i];
    for (int x = 0; x < w; ++x) grow[x] += line[x + before];
    for (int i = 0; i < after; ++i) grow[w - 1] += line[before + w + i];
  }
}

}  // namespace eipnet::kernels
