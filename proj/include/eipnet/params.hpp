#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "eipnet/autodiff.hpp"
#include "eipnet/philox.hpp"

namespace eipnet {

/// Ordered collection of named tensors.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> value) {
    if (index_.contains(name)) throw ValueError("duplicate parameter name " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
  std::size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValueError("unknown parameter " + std::string(name));
    return it->second;
  }
  Tensor<T>& at(std::string_view name) { return values_[index(name)]; }
  const Tensor<T>& at(std::string_view name) const { return values_[index(name)]; }

  /// Total number of scalar elements.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  bool operator==(const ParamSet& o) const { return names_ == o.names_ && values_ == o.values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameter leaves placed on a tape, looked up by name.
template <class T>
struct Bound {
  const ParamSet<T>* set = nullptr;
  std::vector<Var> vars;

  Var operator[](std::string_view name) const { return vars[set->index(name)]; }
};

template <class T>
Bound<T> bind(Tape<T>& t, const ParamSet<T>& set, bool requires_grad) {
  Bound<T> b{&set, {}};
  b.vars.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) b.vars.push_back(t.leaf(set.value(i), requires_grad));
  return b;
}

template <class T>
std::vector<Tensor<T>> gradients(const Tape<T>& t, const Bound<T>& b) {
  std::vector<Tensor<T>> out;
  out.reserve(b.vars.size());
  for (Var v : b.vars) out.push_back(t.grad(v));
  return out;
}

enum class LayerKind { conv, transposed_conv, fully_connected };

/// One weighted layer: enough to create, initialise and count it.
struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int in = 0;
  int out = 0;
  int k = 1;
  int stride = 1;
  int out_size = 1;  ///< Output height = width at the reference input size.

  Shape weight_shape() const {
    switch (kind) {
      case LayerKind::conv:
        return {out, in, k, k};
      case LayerKind::transposed_conv:
        return {in, out, k, k};
      default:
        return {out, in, 1, 1};
    }
  }
  Shape bias_shape() const { return {1, out, 1, 1}; }
  std::size_t param_count() const { return weight_shape().numel() + static_cast<std::size_t>(out); }

  /// Inputs summed into each output element; transposed convs spread each
  /// input over k*k outputs spaced by the stride, so each output sees
  /// in * k^2 / stride^2 of them.
  double fan_in() const {
    switch (kind) {
      case LayerKind::conv:
        return static_cast<double>(in) * k * k;
      case LayerKind::transposed_conv:
        return static_cast<double>(in) * k * k / (stride * stride);
      default:
        return in;
    }
  }

  /// Multiply-accumulates: output positions for convs, input positions for
  /// transposed convs.
  std::uint64_t macs() const {
    const std::uint64_t per = static_cast<std::uint64_t>(k) * k * in * out;
    switch (kind) {
      case LayerKind::conv:
        return per * out_size * out_size;
      case LayerKind::transposed_conv: {
        const std::uint64_t in_size = static_cast<std::uint64_t>(out_size / stride);
        return per * in_size * in_size;
      }
      default:
        return per;
    }
  }
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases. Each layer draws
/// from its own Philox stream keyed by (seed, layer index).
template <class T>
ParamSet<T> init_params(const std::vector<LayerDesc>& layers, std::uint64_t seed) {
  ParamSet<T> set;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    Philox rng(seed, stream_id(0x696e6974, i));
    Tensor<T> w(l.weight_shape());
    const double sd = std::sqrt(2.0 / l.fan_in());
    for (auto& v : w.data()) v = static_cast<T>(rng.normal() * sd);
    set.add(l.name + ".weight", std::move(w));
    set.add(l.name + ".bias", Tensor<T>(l.bias_shape()));
  }
  return set;
}

/// Parameters of the layer list with every value zero.
template <class T>
ParamSet<T> zero_params(const std::vector<LayerDesc>& layers) {
  ParamSet<T> set;
  for (const auto& l : layers) {
    set.add(l.name + ".weight", Tensor<T>(l.weight_shape()));
    set.add(l.name + ".bias", Tensor<T>(l.bias_shape()));
  }
  return set;
}

inline std::size_t param_count(const std::vector<LayerDesc>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

inline std::uint64_t mac_count(const std::vector<LayerDesc>& layers) {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.macs();
  return n;
}

}  // namespace eipnet
