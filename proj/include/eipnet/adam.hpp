#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "eipnet/params.hpp"

namespace eipnet {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0) || !(eps > 0)) throw ValueError("adam: lr and eps must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValueError("adam: betas must lie in [0, 1)");
  }
};

/// First and second moments per parameter tensor plus the step counter.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(const ParamSet<T>& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.emplace_back(params.value(i).shape());
      v.emplace_back(params.value(i).shape());
    }
  }
};

namespace detail {

template <class T>
void adam_update(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, const AdamConfig& c, double bc1,
                 double bc2) {
  if (p.shape() != g.shape() || p.shape() != m.shape()) {
    throw ShapeError("adam: parameter " + p.shape().str() + " vs gradient " + g.shape().str());
  }
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step = static_cast<T>(c.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1 - b1) * g[i];
    v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

}  // namespace detail

/// One bias-corrected Adam step over every tensor of `params`.
template <class T>
void adam_step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, const AdamConfig& c) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam: parameter, gradient and state counts differ");
  }
  ++state.t;
  const double bc1 = 1 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::adam_update(params.value(i), grads[i], state.m[i], state.v[i], c, bc1, bc2);
}

}  // namespace eipnet
