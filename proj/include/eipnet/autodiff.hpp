#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eipnet/kernels.hpp"
#include "eipnet/tensor.hpp"

namespace eipnet {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, so the
/// node list is already topologically sorted; backward walks it in reverse.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    return push("leaf", std::move(value), {}, requires_grad, nullptr);
  }
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. The node requires grad iff any input does; the
  /// backward function is dropped otherwise.
  Var record(std::string_view kind, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(kind, std::move(value), std::vector<Var>(inputs), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::string_view kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Scalar value of a one-element node.
  T item(Var v) const {
    const auto& t = value(v);
    if (t.size() != 1) throw ShapeError("item() on non-scalar " + t.shape().str());
    return t[0];
  }

  /// Gradient accumulated so far; zeros when nothing reached the node.
  Tensor<T> grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad.empty() && node.value.size() != 0) return Tensor<T>(node.value.shape());
    return node.grad;
  }

  /// Gradient buffer for an op's backward to accumulate into; null when the
  /// node does not require grad.
  Tensor<T>* grad_slot(Var v) {
    Node& node = nodes_.at(v.id);
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return &node.grad;
  }

  const Tensor<T>& grad_out(Var v) const { return nodes_.at(v.id).grad; }

  void backward(Var loss) {
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + root.value.shape().str());
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(*this, Var{i});
    }
  }

 private:
  struct Node {
    std::string_view kind;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
  };

  Var push(std::string_view kind, Tensor<T> value, std::vector<Var> inputs, bool requires_grad, BackwardFn fn) {
    if (!value.all_finite()) throw NonFiniteError("non-finite value produced by " + std::string(kind));
    nodes_.push_back(Node{kind, std::move(value), {}, requires_grad, std::move(inputs), std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline void require_same(const Shape& a, const Shape& b, std::string_view op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// dfdx(in, out) gives the local derivative.
template <class T, class F, class D>
Var unary(Tape<T>& t, std::string_view kind, Var x, F f, D dfdx) {
  Tensor<T> out(t.shape(x));
  const auto& in = t.value(x);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return t.record(kind, std::move(out), {x}, [x, dfdx](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const std::size_t n = gx->size();
    T* __restrict dst = gx->ptr();
    const T* __restrict g = tp.grad_out(self).ptr();
    const T* __restrict in = tp.value(x).ptr();
    const T* __restrict out = tp.value(self).ptr();
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * dfdx(in[i], out[i]);
  });
}

}  // namespace detail

template <class T>
Var detach(Tape<T>& t, Var x) {
  return t.constant(t.value(x));
}

/// 2-D convolution, zero padding. weight (outC, inC, k, k), bias (1, outC, 1, 1).
template <class T>
Var conv2d(Tape<T>& t, Var x, Var weight, Var bias, int stride = 1, int pad = 1) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weight);
  if (ws.h != ws.w || xs.c != ws.c) {
    throw ShapeError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  if (t.value(bias).size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias " + t.shape(bias).str() + " does not match weight " + ws.str());
  }
  if (stride < 1 || pad < 0) throw UnsupportedConfig("conv2d: stride must be >= 1 and pad >= 0");
  const kernels::Window win{ws.h, stride, pad};
  if (xs.h + 2 * pad < win.k || xs.w + 2 * pad < win.k) {
    throw ShapeError("conv2d: input " + xs.str() + " smaller than kernel " + ws.str());
  }
  auto out = kernels::conv2d_forward(t.value(x), t.value(weight), t.value(bias), win);
  return t.record("conv2d", std::move(out), {x, weight, bias}, [x, weight, bias, win](Tape<T>& tp, Var self) {
    kernels::conv2d_backward(tp.value(x), tp.value(weight), tp.grad_out(self), win, tp.grad_slot(x),
                             tp.grad_slot(weight), tp.grad_slot(bias));
  });
}

/// Transposed convolution; only kernel 4, stride 2, pad 1 (exact 2x upsampling)
/// is supported. weight (inC, outC, 4, 4).
template <class T>
Var conv_transpose2d(Tape<T>& t, Var x, Var weight, Var bias, int stride = 2, int pad = 1) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weight);
  if (ws.h != 4 || ws.w != 4 || stride != 2 || pad != 1) {
    throw UnsupportedConfig("conv_transpose2d: only k=4, stride=2, pad=1 is supported (got k=" +
                            std::to_string(ws.h) + "x" + std::to_string(ws.w) + ", stride=" + std::to_string(stride) +
                            ", pad=" + std::to_string(pad) + ")");
  }
  if (xs.c != ws.n) throw ShapeError("conv_transpose2d: input " + xs.str() + " incompatible with weight " + ws.str());
  if (t.value(bias).size() != static_cast<std::size_t>(ws.c)) {
    throw ShapeError("conv_transpose2d: bias " + t.shape(bias).str() + " does not match weight " + ws.str());
  }
  const kernels::Window win{4, 2, 1};
  auto out = kernels::conv_transpose2d_forward(t.value(x), t.value(weight), t.value(bias), win);
  return t.record("conv_transpose2d", std::move(out), {x, weight, bias},
                  [x, weight, bias, win](Tape<T>& tp, Var self) {
                    kernels::conv_transpose2d_backward(tp.value(x), tp.value(weight), tp.grad_out(self), win,
                                                       tp.grad_slot(x), tp.grad_slot(weight), tp.grad_slot(bias));
                  });
}

/// Stride-1 k x k average pooling with replicate padding; output keeps the
/// input size. Even k pads floor((k-1)/2) before and ceil((k-1)/2) after.
template <class T>
Var avg_pool_same(Tape<T>& t, Var x, int k) {
  if (k < 1) throw ValueError("avg_pool_same: kernel size must be >= 1, got " + std::to_string(k));
  const Shape s = t.shape(x);
  Tensor<T> out(s);
  AlignedVector<T> tmp;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) kernels::box_mean_plane(t.value(x).plane(n, c), s.h, s.w, k, out.plane(n, c), tmp);
  return t.record("avg_pool_same", std::move(out), {x}, [x, k](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const Shape s = tp.shape(x);
    AlignedVector<T> tmp;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        kernels::box_mean_plane_backward(tp.grad_out(self).plane(n, c), s.h, s.w, k, gx->plane(n, c), tmp);
  });
}

/// Non-overlapping 2x2 mean pooling (stride 2). Height and width must be even.
template <class T>
Var avg_pool2(Tape<T>& t, Var x) {
  const Shape s = t.shape(x);
  if (s.h % 2 || s.w % 2) throw ShapeError("avg_pool2: odd spatial size " + s.str());
  Tensor<T> out({s.n, s.c, s.h / 2, s.w / 2});
  const auto& in = t.value(x);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int xx = 0; xx < s.w / 2; ++xx)
          out.at(n, c, y, xx) = (in.at(n, c, 2 * y, 2 * xx) + in.at(n, c, 2 * y, 2 * xx + 1) +
                                 in.at(n, c, 2 * y + 1, 2 * xx) + in.at(n, c, 2 * y + 1, 2 * xx + 1)) *
                                T(0.25);
  return t.record("avg_pool2", std::move(out), {x}, [x](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const Shape s = tp.shape(x);
    const auto& g = tp.grad_out(self);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) gx->at(n, c, y, xx) += g.at(n, c, y / 2, xx / 2) * T(0.25);
  });
}

template <class T>
Var relu(Tape<T>& t, Var x) {
  return detail::unary<T>(
      t, "relu", x, [](T v) { return v > 0 ? v : T(0); }, [](T in, T) { return in > 0 ? T(1) : T(0); });
}

template <class T>
Var leaky_relu(Tape<T>& t, Var x, T slope = T(0.2)) {
  return detail::unary<T>(
      t, "leaky_relu", x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T in, T) { return in > 0 ? T(1) : slope; });
}

template <class T>
Var sigmoid(Tape<T>& t, Var x) {
  return detail::unary<T>(
      t, "sigmoid", x,
      [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T out) { return out * (T(1) - out); });
}

/// Elementwise clamp; the gradient passes only where lo < x < hi.
template <class T>
Var clamp(Tape<T>& t, Var x, T lo, T hi) {
  return detail::unary<T>(
      t, "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T in, T) { return (in > lo && in < hi) ? T(1) : T(0); });
}

template <class T>
Var scale(Tape<T>& t, Var x, T s) {
  return detail::unary<T>(
      t, "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

/// 1 - x elementwise.
template <class T>
Var one_minus(Tape<T>& t, Var x) {
  return detail::unary<T>(
      t, "one_minus", x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

/// Softmax over all c*h*w entries of each batch item.
template <class T>
Var softmax(Tape<T>& t, Var x) {
  const Shape s = t.shape(x);
  const auto& in = t.value(x);
  Tensor<T> out(s);
  const std::size_t m = s.item();
  for (int n = 0; n < s.n; ++n) {
    const T* src = in.item(n);
    T* dst = out.item(n);
    T top = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < m; ++i) top = std::max(top, src[i]);
    T total = 0;
    for (std::size_t i = 0; i < m; ++i) total += (dst[i] = std::exp(src[i] - top));
    for (std::size_t i = 0; i < m; ++i) dst[i] /= total;
  }
  return t.record("softmax", std::move(out), {x}, [x](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const Shape s = tp.shape(x);
    const auto& y = tp.value(self);
    const auto& g = tp.grad_out(self);
    const std::size_t m = s.item();
    for (int n = 0; n < s.n; ++n) {
      const T* yp = y.item(n);
      const T* gp = g.item(n);
      T dot = 0;
      for (std::size_t i = 0; i < m; ++i) dot += yp[i] * gp[i];
      T* out = gx->item(n);
      for (std::size_t i = 0; i < m; ++i) out[i] += yp[i] * (gp[i] - dot);
    }
  });
}

enum class Activation { relu, leaky_relu, sigmoid, softmax };

template <class T>
Var activation(Tape<T>& t, Var x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(t, x);
    case Activation::leaky_relu:
      return leaky_relu(t, x, T(0.2));
    case Activation::sigmoid:
      return sigmoid(t, x);
    case Activation::softmax:
      return softmax(t, x);
  }
  throw ValueError("unknown activation");
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::require_same(t.shape(a), t.shape(b), "add");
  Tensor<T> out(t.shape(a));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.value(a)[i] + t.value(b)[i];
  return t.record("add", std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad_out(self);
    for (Var v : {a, b}) {
      if (Tensor<T>* gv = tp.grad_slot(v))
        for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  detail::require_same(t.shape(a), t.shape(b), "sub");
  Tensor<T> out(t.shape(a));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.value(a)[i] - t.value(b)[i];
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad_out(self);
    if (Tensor<T>* ga = tp.grad_slot(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor<T>* gb = tp.grad_slot(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

/// Channel concatenation; a's channels come first.
template <class T>
Var concat_channels(Tape<T>& t, Var a, Var b) {
  const Shape sa = t.shape(a);
  const Shape sb = t.shape(b);
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(t.value(a).item(n), sa.item(), out.item(n));
    std::copy_n(t.value(b).item(n), sb.item(), out.item(n) + sa.item());
  }
  return t.record("concat_channels", std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const Shape sa = tp.shape(a);
    const Shape sb = tp.shape(b);
    const auto& g = tp.grad_out(self);
    for (int n = 0; n < sa.n; ++n) {
      if (Tensor<T>* ga = tp.grad_slot(a))
        for (std::size_t i = 0; i < sa.item(); ++i) ga->item(n)[i] += g.item(n)[i];
      if (Tensor<T>* gb = tp.grad_slot(b))
        for (std::size_t i = 0; i < sb.item(); ++i) gb->item(n)[i] += g.item(n)[sa.item() + i];
    }
  });
}

/// Affine map on each flattened batch item. weight (out, in, 1, 1), bias
/// (1, out, 1, 1); result (n, out, 1, 1).
template <class T>
Var fully_connected(Tape<T>& t, Var x, Var weight, Var bias) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weight);
  const auto in_dim = static_cast<int>(xs.item());
  if (ws.c * ws.h * ws.w != in_dim) {
    throw ShapeError("fully_connected: input " + xs.str() + " (" + std::to_string(in_dim) +
                     " features) incompatible with weight " + ws.str());
  }
  if (t.value(bias).size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("fully_connected: bias " + t.shape(bias).str() + " does not match weight " + ws.str());
  }
  Tensor<T> out({xs.n, ws.n, 1, 1});
  kernels::MapConstMat<T> xm(t.value(x).ptr(), xs.n, in_dim);
  kernels::MapConstMat<T> wm(t.value(weight).ptr(), ws.n, in_dim);
  kernels::MapMat<T> om(out.ptr(), xs.n, ws.n);
  om.noalias() = xm * wm.transpose();
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o) om(n, o) += t.value(bias)[o];
  return t.record("fully_connected", std::move(out), {x, weight, bias},
                  [x, weight, bias, in_dim](Tape<T>& tp, Var self) {
                    const int n = tp.shape(x).n;
                    const int outs = tp.shape(weight).n;
                    kernels::MapConstMat<T> g(tp.grad_out(self).ptr(), n, outs);
                    if (Tensor<T>* gx = tp.grad_slot(x))
                      kernels::MapMat<T>(gx->ptr(), n, in_dim).noalias() +=
                          g * kernels::MapConstMat<T>(tp.value(weight).ptr(), outs, in_dim);
                    if (Tensor<T>* gw = tp.grad_slot(weight))
                      kernels::MapMat<T>(gw->ptr(), outs, in_dim).noalias() +=
                          g.transpose() * kernels::MapConstMat<T>(tp.value(x).ptr(), n, in_dim);
                    if (Tensor<T>* gb = tp.grad_slot(bias))
                      for (int o = 0; o < outs; ++o) (*gb)[o] += g.col(o).sum();
                  });
}

/// Per-pixel 3x3 linear map across the three channels.
template <class T>
Var channel_mix(Tape<T>& t, Var x, const std::array<std::array<double, 3>, 3>& m) {
  const Shape s = t.shape(x);
  if (s.c != 3) throw ShapeError("channel_mix: expected 3 channels, got " + s.str());
  Tensor<T> out(s);
  const auto& in = t.value(x);
  const std::size_t p = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int r = 0; r < 3; ++r) {
      T* dst = out.plane(n, r);
      for (std::size_t i = 0; i < p; ++i)
        dst[i] = static_cast<T>(m[r][0]) * in.plane(n, 0)[i] + static_cast<T>(m[r][1]) * in.plane(n, 1)[i] +
                 static_cast<T>(m[r][2]) * in.plane(n, 2)[i];
    }
  return t.record("channel_mix", std::move(out), {x}, [x, m](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const Shape s = tp.shape(x);
    const auto& g = tp.grad_out(self);
    const std::size_t p = s.plane();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < 3; ++c) {
        T* dst = gx->plane(n, c);
        for (std::size_t i = 0; i < p; ++i)
          dst[i] += static_cast<T>(m[0][c]) * g.plane(n, 0)[i] + static_cast<T>(m[1][c]) * g.plane(n, 1)[i] +
                    static_cast<T>(m[2][c]) * g.plane(n, 2)[i];
      }
  });
}

template <class T>
Var sum(Tape<T>& t, Var x) {
  T acc = 0;
  for (T v : t.value(x).data()) acc += v;
  return t.record("sum", Tensor<T>({1, 1, 1, 1}, acc), {x}, [x](Tape<T>& tp, Var self) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      const T g = tp.grad_out(self)[0];
      for (auto& v : gx->data()) v += g;
    }
  });
}

template <class T>
Var mean(Tape<T>& t, Var x) {
  return scale(t, sum(t, x), T(1) / static_cast<T>(t.value(x).size()));
}

/// sum((a - b)^2) / divisor as a scalar.
template <class T>
Var sum_squared_diff(Tape<T>& t, Var a, Var b, T divisor) {
  detail::require_same(t.shape(a), t.shape(b), "sum_squared_diff");
  T acc = 0;
  for (std::size_t i = 0; i < t.value(a).size(); ++i) {
    const T d = t.value(a)[i] - t.value(b)[i];
    acc += d * d;
  }
  return t.record("sum_squared_diff", Tensor<T>({1, 1, 1, 1}, acc / divisor), {a, b},
                  [a, b, divisor](Tape<T>& tp, Var self) {
                    const T g = tp.grad_out(self)[0] * T(2) / divisor;
                    Tensor<T>* ga = tp.grad_slot(a);
                    Tensor<T>* gb = tp.grad_slot(b);
                    for (std::size_t i = 0; i < tp.value(a).size(); ++i) {
                      const T d = tp.value(a)[i] - tp.value(b)[i];
                      if (ga) (*ga)[i] += g * d;
                      if (gb) (*gb)[i] -= g * d;
                    }
                  });
}

/// Jensen-Shannon divergence (natural log) between the per-item
/// distributions p and q, averaged over the batch. 0 * log 0 is taken as 0.
template <class T>
Var js_divergence(Tape<T>& t, Var p, Var q) {
  detail::require_same(t.shape(p), t.shape(q), "js_divergence");
  const Shape s = t.shape(p);
  const std::size_t m = s.item();
  for (Var v : {p, q}) {
    for (int n = 0; n < s.n; ++n) {
      T total = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const T x = t.value(v).item(n)[i];
        if (x < 0) throw ValueError("js_divergence: negative probability " + std::to_string(x));
        total += x;
      }
      if (std::abs(total - T(1)) > T(1e-5)) {
        throw ValueError("js_divergence: distribution sums to " + std::to_string(total) + ", expected 1");
      }
    }
  }
  auto half_kl = [](T a, T mid) { return a > 0 ? T(0.5) * a * std::log(a / mid) : T(0); };
  T acc = 0;
  for (std::size_t i = 0; i < t.value(p).size(); ++i) {
    const T a = t.value(p)[i];
    const T b = t.value(q)[i];
    const T mid = (a + b) / 2;
    acc += half_kl(a, mid) + half_kl(b, mid);
  }
  return t.record("js_divergence", Tensor<T>({1, 1, 1, 1}, acc / static_cast<T>(s.n)), {p, q},
                  [p, q](Tape<T>& tp, Var self) {
                    const T g = tp.grad_out(self)[0] / static_cast<T>(tp.shape(p).n);
                    Tensor<T>* gp = tp.grad_slot(p);
                    Tensor<T>* gq = tp.grad_slot(q);
                    for (std::size_t i = 0; i < tp.value(p).size(); ++i) {
                      const T a = tp.value(p)[i];
                      const T b = tp.value(q)[i];
                      const T mid = (a + b) / 2;
                      // d/da = 0.5 * log(a / mid); zero-mass entries get no gradient.
                      if (gp && a > 0) (*gp)[i] += g * T(0.5) * std::log(a / mid);
                      if (gq && b > 0) (*gq)[i] += g * T(0.5) * std::log(b / mid);
                    }
                  });
}

/// Batch mean of -log(clamp(x, eps, 1 - eps)) for probabilities x of shape (n, 1, 1, 1).
template <class T>
Var neg_log(Tape<T>& t, Var x, T eps = T(1e-7)) {
  const auto& in = t.value(x);
  T acc = 0;
  for (T v : in.data()) acc -= std::log(std::clamp(v, eps, T(1) - eps));
  const T count = static_cast<T>(t.shape(x).n);
  return t.record("neg_log", Tensor<T>({1, 1, 1, 1}, acc / count), {x}, [x, eps, count](Tape<T>& tp, Var self) {
    Tensor<T>* gx = tp.grad_slot(x);
    if (!gx) return;
    const T g = tp.grad_out(self)[0] / count;
    const auto& in = tp.value(x);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > eps && in[i] < T(1) - eps) (*gx)[i] -= g / in[i];
  });
}

/// Mean softmax cross-entropy of per-item logits against integer labels.
template <class T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels) {
  const Shape s = t.shape(logits);
  if (labels.size() != static_cast<std::size_t>(s.n)) throw ShapeError("softmax_cross_entropy: label count mismatch");
  const std::size_t m = s.item();
  Tensor<T> probs(s);
  T loss = 0;
  for (int n = 0; n < s.n; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= m) throw ValueError("label out of range");
    const T* z = t.value(logits).item(n);
    T top = *std::max_element(z, z + m);
    T total = 0;
    for (std::size_t i = 0; i < m; ++i) total += (probs.item(n)[i] = std::exp(z[i] - top));
    for (std::size_t i = 0; i < m; ++i) probs.item(n)[i] /= total;
    loss -= (z[labels[n]] - top) - std::log(total);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record("softmax_cross_entropy", Tensor<T>({1, 1, 1, 1}, loss / static_cast<T>(s.n)), {logits},
                  [logits, lab, probs = std::move(probs)](Tape<T>& tp, Var self) {
                    Tensor<T>* gz = tp.grad_slot(logits);
                    if (!gz) return;
                    const Shape s = probs.shape();
                    const T g = tp.grad_out(self)[0] / static_cast<T>(s.n);
                    for (int n = 0; n < s.n; ++n) {
                      for (std::size_t i = 0; i < s.item(); ++i) gz->item(n)[i] += g * probs.item(n)[i];
                      gz->item(n)[lab[n]] -= g;
                    }
                  });
}

}  // namespace eipnet
