#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eipnet/adam.hpp"
#include "eipnet/autodiff.hpp"
#include "eipnet/checkpoint.hpp"
#include "eipnet/params.hpp"
#include "eipnet/philox.hpp"

namespace eipnet {

inline constexpr int kEmbeddingDim = 512;

/// Small identity network: four 3x3 conv + relu + 2x2 mean pool stages and
/// a linear map to 512 logits.
struct EmbedderSpec {
  int input_size = 128;
  int width_divisor = 1;

  void validate() const {
    if (input_size < 16 || input_size % 16 != 0) throw ValueError("embedder input_size must be a multiple of 16");
    if (width_divisor < 1 || 16 % width_divisor != 0) throw ValueError("embedder width_divisor must divide 16");
  }

  std::vector<LayerDesc> layers() const {
    validate();
    using K = LayerKind;
    const int s = input_size;
    const int w1 = 16 / width_divisor, w2 = 32 / width_divisor, w3 = 64 / width_divisor, w4 = 128 / width_divisor;
    return {
        {"conv1", K::conv, 3, w1, 3, 1, s},
        {"conv2", K::conv, w1, w2, 3, 1, s / 2},
        {"conv3", K::conv, w2, w3, 3, 1, s / 4},
        {"conv4", K::conv, w3, w4, 3, 1, s / 8},
        {"fc", K::fully_connected, w4 * (s / 16) * (s / 16), kEmbeddingDim, 1, 1, 1},
    };
  }
};

/// Embedding logits, shape (n, 512, 1, 1).
template <class T>
Var embed(Tape<T>& t, const EmbedderSpec& spec, const Bound<T>& p, Var img) {
  const Shape s = t.shape(img);
  if (s.c != 3 || s.h != spec.input_size || s.w != spec.input_size) {
    throw ShapeError("embedder: expected (n,3," + std::to_string(spec.input_size) + "," +
                     std::to_string(spec.input_size) + ") input, got " + s.str());
  }
  Var x = img;
  for (const char* name : {"conv1", "conv2", "conv3", "conv4"}) {
    const std::string n = name;
    x = avg_pool2(t, relu(t, conv2d(t, x, p[n + ".weight"], p[n + ".bias"], 1, 1)));
  }
  return fully_connected(t, x, p["fc.weight"], p["fc.bias"]);
}

template <class T>
Tensor<T> embed_values(const EmbedderSpec& spec, const ParamSet<T>& params, const Tensor<T>& img) {
  Tape<T> t;
  return t.value(embed(t, spec, bind(t, params, false), t.constant(img)));
}

struct EmbedderTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct EmbedderTrainResult {
  double final_loss = 0;
  double train_accuracy = 0;
};

/// Top-1 accuracy of argmax(logits) against labels.
template <class T>
double embedder_accuracy(const EmbedderSpec& spec, const ParamSet<T>& params, const std::vector<Tensor<T>>& images,
                         const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto z = embed_values(spec, params, images[i]);
    hits += static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin()) ==
            static_cast<std::size_t>(labels[i]);
  }
  return images.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(images.size());
}

/// Softmax cross-entropy over identities, labels used directly as bins of
/// the 512-way output. `images` are single items (1, 3, s, s).
template <class T>
EmbedderTrainResult train_embedder(const EmbedderSpec& spec, ParamSet<T>& params, const std::vector<Tensor<T>>& images,
                                   const std::vector<int>& labels, const EmbedderTrainConfig& cfg) {
  if (images.size() != labels.size()) throw ValueError("train_embedder: image and label counts differ");
  std::unordered_map<int, int> per_label;
  for (int l : labels) {
    if (l < 0 || l >= kEmbeddingDim) throw ValueError("identity label out of range [0, 512): " + std::to_string(l));
    ++per_label[l];
  }
  if (per_label.size() < 2) throw ValueError("train_embedder needs at least 2 identities");
  for (const auto& [l, n] : per_label)
    if (n < 2) throw ValueError("identity " + std::to_string(l) + " has fewer than 2 images");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ValueError("train_embedder: bad batch size or epoch count");

  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  AdamState<T> state(params);
  EmbedderTrainResult res;
  const int s = spec.input_size;
  std::vector<std::size_t> order(images.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Philox rng(cfg.seed, stream_id(0x656d6264, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      Tensor<T> x({static_cast<int>(e - b), 3, s, s});
      std::vector<int> y;
      for (std::size_t j = b; j < e; ++j) {
        std::copy(images[order[j]].data().begin(), images[order[j]].data().end(), x.item(static_cast<int>(j - b)));
        y.push_back(labels[order[j]]);
      }
      Tape<T> t;
      const Bound<T> p = bind(t, params, true);
      const Var loss = softmax_cross_entropy(t, embed(t, spec, p, t.constant(x)), std::span<const int>(y));
      t.backward(loss);
      res.final_loss = static_cast<double>(t.item(loss));
      adam_step(params, gradients(t, p), state, adam);
    }
  }
  res.train_accuracy = embedder_accuracy(spec, params, images, labels);
  return res;
}

/// Embedder checkpoint: tensors under "embedder/", spec in the config text.
template <class T>
Checkpoint embedder_checkpoint(const EmbedderSpec& spec, const ParamSet<T>& params) {
  Checkpoint ck;
  ck.config = "input_size = " + std::to_string(spec.input_size) + "\nwidth_divisor = " +
              std::to_string(spec.width_divisor) + "\n";
  put_params(ck, "embedder", params);
  return ck;
}

template <class T>
std::pair<EmbedderSpec, ParamSet<T>> load_embedder(const Checkpoint& ck) {
  EmbedderSpec spec;
  if (std::sscanf(ck.config.c_str(), "input_size = %d\nwidth_divisor = %d", &spec.input_size, &spec.width_divisor) !=
      2) {
    throw FormatError("not an embedder checkpoint (config text: '" + ck.config.substr(0, 40) + "')");
  }
  return {spec, take_params<T>(ck, "embedder", spec.layers())};
}

/// Named embedding vectors in file order.
struct Embeddings {
  std::vector<std::string> names;
  std::vector<std::vector<double>> vectors;

  void add(std::string name, std::vector<double> v) {
    if (index_.contains(name)) throw FormatError("duplicate embedding name " + name);
    index_.emplace(name, names.size());
    names.push_back(std::move(name));
    vectors.push_back(std::move(v));
  }
  std::size_t size() const { return names.size(); }
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<double>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("no embedding named " + name);
    return vectors[it->second];
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// One "name,v1,...,v512" line per entry, 17 significant digits.
inline std::string format_embeddings(const Embeddings& e) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e.vectors[i].size() != kEmbeddingDim) throw ValueError("embedding " + e.names[i] + " is not 512-dimensional");
    if (e.names[i].find_first_of(",\n") != std::string::npos) {
      throw ValueError("embedding name may not contain ',' or newline: " + e.names[i]);
    }
    out += e.names[i];
    for (double v : e.vectors[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline Embeddings parse_embeddings(const std::string& text) {
  Embeddings e;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw FormatError("embeddings line " + std::to_string(lineno) + ": " + why);
    };
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0) fail("expected name,v1,...,v512");
    std::string name = line.substr(0, comma);
    std::vector<double> v;
    std::size_t pos = comma + 1;
    while (true) {
      const auto next = line.find(',', pos);
      const std::string_view field(line.data() + pos, (next == std::string::npos ? line.size() : next) - pos);
      double x = 0;
      const auto r = std::from_chars(field.data(), field.data() + field.size(), x);
      if (field.empty() || r.ec != std::errc() || r.ptr != field.data() + field.size()) {
        fail("bad value '" + std::string(field) + "'");
      }
      v.push_back(x);
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (v.size() != kEmbeddingDim) fail("expected 512 values, got " + std::to_string(v.size()));
    if (e.contains(name)) fail("duplicate name " + name);
    e.add(std::move(name), std::move(v));
  }
  return e;
}

inline void write_embeddings(const std::filesystem::path& path, const Embeddings& e) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << format_embeddings(e);
  if (!f) throw Error("write failed: " + path.string());
}

inline Embeddings read_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_embeddings(ss.str());
}

}  // namespace eipnet
