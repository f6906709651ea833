#pragma once

#include <array>
#include <string>
#include <vector>

#include "eipnet/autodiff.hpp"
#include "eipnet/params.hpp"

namespace eipnet {

/// Generator topology. The defaults are the full-width network; the width
/// divisor shrinks every channel count uniformly for desk-scale runs.
struct GeneratorSpec {
  int width_divisor = 1;
  std::array<bool, 3> edge_blocks{true, true, true};
  std::array<int, 3> pool_kernels{5, 7, 10};
  int input_size = 16;

  int width(int full) const { return full / width_divisor; }

  void validate() const {
    if (width_divisor < 1 || 64 % width_divisor != 0) {
      throw ValueError("width_divisor must divide 64, got " + std::to_string(width_divisor));
    }
    if (input_size < 1) throw ValueError("generator input_size must be positive");
    for (int k : pool_kernels)
      if (k < 1) throw ValueError("edge-block pooling kernel must be >= 1");
  }

  std::vector<LayerDesc> layers() const {
    validate();
    const int c512 = width(512), c256 = width(256), c128 = width(128), c64 = width(64);
    const int s = input_size;
    using K = LayerKind;
    std::vector<LayerDesc> l = {
        {"conv0", K::conv, 3, c512, 3, 1, s},
        {"conv1_1", K::conv, c512, c512, 3, 1, s},
        {"conv1_2", K::conv, c512, c512, 3, 1, s},
        {"t_conv1", K::transposed_conv, c512, c256, 4, 2, 2 * s},
    };
    if (edge_blocks[0]) l.push_back({"edge1", K::conv, c256, 1, 1, 1, 2 * s});
    l.push_back({"conv2_1", K::conv, 2 * c256, c512, 3, 1, 2 * s});
    l.push_back({"conv2_2", K::conv, c512, c256, 3, 1, 2 * s});
    l.push_back({"t_conv2", K::transposed_conv, c256, c128, 4, 2, 4 * s});
    if (edge_blocks[1]) l.push_back({"edge2", K::conv, c128, 1, 1, 1, 4 * s});
    l.push_back({"conv3_1", K::conv, 2 * c128, c256, 3, 1, 4 * s});
    l.push_back({"conv3_2", K::conv, c256, c128, 3, 1, 4 * s});
    l.push_back({"t_conv3", K::transposed_conv, c128, c64, 4, 2, 8 * s});
    if (edge_blocks[2]) l.push_back({"edge3", K::conv, c64, 1, 1, 1, 8 * s});
    l.push_back({"conv4", K::conv, 2 * c64, 3, 3, 1, 8 * s});
    return l;
  }
};

/// Discriminator topology: seven 3x3 convs, then two fully connected layers.
struct DiscriminatorSpec {
  int width_divisor = 1;
  int input_size = 128;

  int width(int full) const { return full / width_divisor; }

  void validate() const {
    if (width_divisor < 1 || 128 % width_divisor != 0) {
      throw ValueError("discriminator width_divisor must divide 128, got " + std::to_string(width_divisor));
    }
    if (input_size < 8 || input_size % 8 != 0) throw ValueError("discriminator input_size must be a multiple of 8");
  }

  int flat_features() const { return (input_size / 8) * (input_size / 8) * width(512); }

  std::vector<LayerDesc> layers() const {
    validate();
    const int s = input_size;
    using K = LayerKind;
    return {
        {"conv1_1", K::conv, 3, width(128), 3, 1, s},
        {"conv1_2", K::conv, width(128), width(128), 3, 2, s / 2},
        {"conv2_1", K::conv, width(128), width(256), 3, 1, s / 2},
        {"conv2_2", K::conv, width(256), width(256), 3, 2, s / 4},
        {"conv3_1", K::conv, width(256), width(256), 3, 1, s / 4},
        {"conv3_2", K::conv, width(256), width(512), 3, 2, s / 8},
        {"conv4", K::conv, width(512), width(512), 3, 1, s / 8},
        {"fc1", K::fully_connected, flat_features(), width(512), 1, 1, 1},
        {"fc2", K::fully_connected, width(512), 1, 1, 1, 1},
    };
  }
};

/// Layer name and output shape, in execution order.
struct TraceRow {
  std::string layer;
  Shape shape;
};

struct EdgeBlockOutput {
  Var concat;     ///< features followed by their high-frequency residual
  Var high_freq;  ///< features - avg_pool_same(features, s)
  Var logits;     ///< single-channel 1x1 projection clamped to [0, 1]
};

/// Residual of a low-pass (stride-1 average pool), concatenated back onto
/// the features; `weight`/`bias` project it to one supervised channel.
template <class T>
EdgeBlockOutput edge_block(Tape<T>& t, Var features, int s, Var weight, Var bias) {
  const Var smooth = avg_pool_same(t, features, s);
  const Var high = sub(t, features, smooth);
  const Var logits = clamp(t, conv2d(t, high, weight, bias, 1, 0), T(0), T(1));
  return {concat_channels(t, features, high), high, logits};
}

struct GeneratorOutput {
  Var sr;                         ///< raw output, not clamped
  std::array<Var, 3> edge_logits; ///< invalid handles for disabled blocks
  std::vector<TraceRow> trace;
};

template <class T>
GeneratorOutput generator_forward(Tape<T>& t, const GeneratorSpec& spec, const Bound<T>& p, Var lr) {
  const Shape in = t.shape(lr);
  if (in.c != 3) throw ShapeError("generator: expected 3 input channels, got " + in.str());
  GeneratorOutput out;
  auto note = [&](const char* name, Var v) {
    out.trace.push_back({name, t.shape(v)});
    return v;
  };
  auto conv = [&](const std::string& name, Var x) {
    return conv2d(t, x, p[name + ".weight"], p[name + ".bias"], 1, 1);
  };
  auto up = [&](const std::string& name, Var x) {
    return conv_transpose2d(t, x, p[name + ".weight"], p[name + ".bias"], 2, 1);
  };
  auto block = [&](int i, Var features) {
    const std::string name = "edge" + std::to_string(i + 1);
    if (!spec.edge_blocks[i]) {
      // Disabled: keep the downstream channel count with an all-zero residual.
      return concat_channels(t, features, t.constant(Tensor<T>(t.shape(features))));
    }
    const auto e = edge_block(t, features, spec.pool_kernels[i], p[name + ".weight"], p[name + ".bias"]);
    out.edge_logits[i] = e.logits;
    return e.concat;
  };

  const Var c0 = note("conv0", conv("conv0", lr));
  const Var c11 = note("conv1_1", relu(t, conv("conv1_1", c0)));
  const Var c12 = note("conv1_2", relu(t, conv("conv1_2", c11)));
  const Var r1 = note("residual1", add(t, c0, c12));
  const Var u1 = note("t_conv1", relu(t, up("t_conv1", r1)));
  const Var e1 = note("edge_block1", block(0, u1));
  const Var c21 = note("conv2_1", relu(t, conv("conv2_1", e1)));
  const Var c22 = note("conv2_2", relu(t, conv("conv2_2", c21)));
  const Var r2 = note("residual2", add(t, u1, c22));
  const Var u2 = note("t_conv2", relu(t, up("t_conv2", r2)));
  const Var e2 = note("edge_block2", block(1, u2));
  const Var c31 = note("conv3_1", relu(t, conv("conv3_1", e2)));
  const Var c32 = note("conv3_2", relu(t, conv("conv3_2", c31)));
  const Var r3 = note("residual3", add(t, u2, c32));
  const Var u3 = note("t_conv3", relu(t, up("t_conv3", r3)));
  const Var e3 = note("edge_block3", block(2, u3));
  out.sr = note("conv4", conv("conv4", e3));
  return out;
}

struct DiscriminatorOutput {
  Var prob;  ///< (n, 1, 1, 1), sigmoid output
  int flat_features = 0;
};

template <class T>
DiscriminatorOutput discriminator_forward(Tape<T>& t, const DiscriminatorSpec& spec, const Bound<T>& p, Var img) {
  const Shape s = t.shape(img);
  if (s.c != 3 || s.h != spec.input_size || s.w != spec.input_size) {
    throw ShapeError("discriminator: expected (n,3," + std::to_string(spec.input_size) + "," +
                     std::to_string(spec.input_size) + ") input, got " + s.str());
  }
  static constexpr std::array<std::pair<const char*, int>, 7> convs{
      {{"conv1_1", 1}, {"conv1_2", 2}, {"conv2_1", 1}, {"conv2_2", 2}, {"conv3_1", 1}, {"conv3_2", 2}, {"conv4", 1}}};
  Var x = img;
  for (const auto& [name, stride] : convs) {
    const std::string n = name;
    x = leaky_relu(t, conv2d(t, x, p[n + ".weight"], p[n + ".bias"], stride, 1));
  }
  DiscriminatorOutput out;
  out.flat_features = static_cast<int>(t.shape(x).item());
  x = leaky_relu(t, fully_connected(t, x, p["fc1.weight"], p["fc1.bias"]));
  x = fully_connected(t, x, p["fc2.weight"], p["fc2.bias"]);
  out.prob = sigmoid(t, x);
  return out;
}

/// Inference: SR image clamped to [0, 1] plus the edge logits of enabled
/// blocks (empty tensors for disabled ones).
template <class T>
struct Inference {
  Tensor<T> sr;
  std::array<Tensor<T>, 3> edges;
};

template <class T>
Inference<T> super_resolve(const GeneratorSpec& spec, const ParamSet<T>& params, const Tensor<T>& lr) {
  Tape<T> t;
  const Bound<T> p = bind(t, params, false);
  const auto out = generator_forward(t, spec, p, t.constant(lr));
  Inference<T> res;
  res.sr = t.value(clamp(t, out.sr, T(0), T(1)));
  for (int i = 0; i < 3; ++i)
    if (out.edge_logits[i].valid()) res.edges[i] = t.value(out.edge_logits[i]);
  return res;
}

}  // namespace eipnet
