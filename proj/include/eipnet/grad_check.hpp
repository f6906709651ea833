#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "eipnet/autodiff.hpp"
#include "eipnet/philox.hpp"

namespace eipnet {

/// sum(x * weights) with constant weights; turns any tensor output into a
/// scalar whose gradient exercises every element.
template <class T>
Var weighted_sum(Tape<T>& t, Var x, const Tensor<T>& weights) {
  detail::require_same(t.shape(x), weights.shape(), "weighted_sum");
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += t.value(x)[i] * weights[i];
  return t.record("weighted_sum", Tensor<T>({1, 1, 1, 1}, acc), {x}, [x, weights](Tape<T>& tp, Var self) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      const T g = tp.grad_out(self)[0];
      for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += g * weights[i];
    }
  });
}

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  Philox rng(seed, 0x6772616463686bULL);
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

/// Builds a scalar from leaf handles on a fresh tape.
using ScalarFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

enum class Stencil { central, five_point };

/// Maximum over all elements of all inputs of
/// |analytic - numeric| / max(1e-12, |analytic| + |numeric|). The numeric
/// derivative is the central difference with step eps, or the five-point
/// stencil (O(eps^4) truncation) when asked.
inline double grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double eps = 1e-5,
                         Stencil stencil = Stencil::central) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x, grads != nullptr));
    const Var out = fn(tape, vars);
    if (grads) {
      tape.backward(out);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return tape.item(out);
  };

  std::vector<Tensor<double>> analytic;
  evaluate(inputs, &analytic);

  double worst = 0.0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      auto at = [&](double offset) {
        probe[k][i] = saved + offset;
        return evaluate(probe, nullptr);
      };
      double numeric;
      if (stencil == Stencil::central) {
        numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      } else {
        numeric = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps);
      }
      probe[k][i] = saved;
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace eipnet
