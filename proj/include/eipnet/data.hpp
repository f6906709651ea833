#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eipnet/canny.hpp"
#include "eipnet/image.hpp"
#include "eipnet/image_io.hpp"
#include "eipnet/philox.hpp"

namespace eipnet {

inline constexpr int kHrSize = 128;
inline constexpr int kLrSize = 16;

enum class CropPolicy { celeba_178, fraction_0_7 };

inline CropPolicy parse_crop_policy(const std::string& s) {
  if (s == "celeba_178") return CropPolicy::celeba_178;
  if (s == "fraction_0.7_min_side") return CropPolicy::fraction_0_7;
  throw ValueError("unknown crop policy '" + s + "' (expected celeba_178 or fraction_0.7_min_side)");
}

inline std::string to_string(CropPolicy p) {
  return p == CropPolicy::celeba_178 ? "celeba_178" : "fraction_0.7_min_side";
}

/// Face box in pixel coordinates: rows [top, bottom), columns [left, right).
struct BBox {
  int top = 0;
  int right = 0;
  int bottom = 0;
  int left = 0;

  bool operator==(const BBox&) const = default;
  void check(int h, int w) const {
    if (!(0 <= top && top < bottom && bottom <= h && 0 <= left && left < right && right <= w)) {
      throw ValueError("bbox " + std::to_string(top) + "," + std::to_string(right) + "," + std::to_string(bottom) +
                       "," + std::to_string(left) + " out of bounds for " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
  }
};

/// "top,right,bottom,left".
inline BBox parse_bbox(const std::string& s) {
  BBox b;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d,%d,%d,%d%c", &b.top, &b.right, &b.bottom, &b.left, &tail) != 4) {
    throw FormatError("bad bbox '" + s + "' (expected top,right,bottom,left)");
  }
  return b;
}

struct ManifestRecord {
  std::filesystem::path path;
  std::optional<std::string> identity;
  std::optional<BBox> bbox;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  CropPolicy crop = CropPolicy::celeba_178;

  /// Identity strings mapped to 0, 1, ... in order of first appearance;
  /// -1 for records without one.
  std::vector<int> identity_labels() const {
    std::map<std::string, int> ids;
    std::vector<int> out;
    for (const auto& r : records) {
      if (!r.identity) {
        out.push_back(-1);
        continue;
      }
      auto [it, fresh] = ids.try_emplace(*r.identity, static_cast<int>(ids.size()));
      out.push_back(it->second);
    }
    return out;
  }
};

/// Parses `path<TAB>identity<TAB>top,right,bottom,left` lines; trailing
/// fields may be empty or absent, '#' starts a comment line. Relative paths
/// resolve against `base_dir`.
inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() > 3) throw FormatError("manifest line " + std::to_string(lineno) + ": more than 3 fields");
    if (f[0].empty()) throw FormatError("manifest line " + std::to_string(lineno) + ": empty path");
    ManifestRecord r;
    r.path = std::filesystem::path(f[0]);
    if (r.path.is_relative()) r.path = base_dir / r.path;
    if (f.size() > 1 && !f[1].empty()) r.identity = f[1];
    if (f.size() > 2 && !f[2].empty()) {
      try {
        r.bbox = parse_bbox(f[2]);
      } catch (const FormatError& e) {
        throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

/// Loads a manifest file and checks that every listed image exists.
inline Manifest load_manifest(const std::filesystem::path& path, CropPolicy crop) {
  if (!std::filesystem::exists(path)) throw Error("manifest not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  Manifest m = parse_manifest(ss.str(), path.parent_path());
  m.crop = crop;
  if (m.records.empty()) throw ValueError("manifest " + path.string() + " lists no images");
  std::string missing;
  std::size_t n_missing = 0;
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(r.path)) {
      missing += "\n  " + r.path.string();
      ++n_missing;
    }
  }
  if (n_missing) throw Error("manifest " + path.string() + ": " + std::to_string(n_missing) + " missing image(s):" + missing);
  return m;
}

inline std::string format_manifest(const Manifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += r.path.generic_string();
    out += '\t';
    if (r.identity) out += *r.identity;
    out += '\t';
    if (r.bbox) {
      out += std::to_string(r.bbox->top) + "," + std::to_string(r.bbox->right) + "," + std::to_string(r.bbox->bottom) +
             "," + std::to_string(r.bbox->left);
    }
    out += '\n';
  }
  return out;
}

/// Square side the crop policy takes from an h x w image, or nullopt when
/// the image is too small for it.
inline std::optional<int> crop_side(CropPolicy p, int h, int w) {
  if (p == CropPolicy::celeba_178) {
    if (h < 178 || w < 178) return std::nullopt;
    return 178;
  }
  const int side = static_cast<int>(0.7 * std::min(h, w));
  if (side < kHrSize) return std::nullopt;
  return side;
}

class UndersizedImage : public ValueError {
 public:
  using ValueError::ValueError;
};

/// Crop per policy, then bilinear resize to 128 x 128.
inline ImageF prepare_hr(const ImageF& raw, CropPolicy policy) {
  const auto side = crop_side(policy, raw.height, raw.width);
  if (!side) {
    throw UndersizedImage("image " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                          " is too small for crop policy " + to_string(policy));
  }
  return resize(center_crop(raw, *side, *side), kHrSize, kHrSize);
}

/// Exact 2x downscale: with half-pixel centers bilinear weights are 1/2 on
/// each of two source pixels, so every output is the mean of a 2x2 block.
/// The four values are summed in sorted order, making the result
/// independent of how the block is flipped or rotated.
inline ImageF halve(const ImageF& img) {
  if (img.height % 2 || img.width % 2) throw ValueError("halve: odd image size");
  ImageF out(img.height / 2, img.width / 2, img.space);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        std::array<float, 4> v{img.at(c, 2 * y, 2 * x), img.at(c, 2 * y, 2 * x + 1), img.at(c, 2 * y + 1, 2 * x),
                               img.at(c, 2 * y + 1, 2 * x + 1)};
        std::sort(v.begin(), v.end());
        out.at(c, y, x) = static_cast<float>(((static_cast<double>(v[0]) + v[1]) + v[2] + v[3]) * 0.25);
      }
  return out;
}

/// Training LR: three successive 2x downscales.
inline ImageF progressive_lr(const ImageF& hr) { return halve(halve(halve(hr))); }

struct TrainExample {
  ImageF lr;
  ImageF hr;
  std::array<EdgeMap, 3> edges;  ///< Canny of hr resized to 32, 64, 128
  int identity = -1;
  bool flipped = false;
  int rotation = 0;
};

struct Augmentation {
  bool flip = false;
  int rotation = 0;
};

/// Flip with p = 0.5, then rotation 0 / 90 / 270 with p = 0.5 / 0.25 / 0.25.
inline Augmentation draw_augmentation(Philox& rng) {
  Augmentation a;
  a.flip = rng.bernoulli(0.5);
  const double u = rng.uniform();
  a.rotation = u < 0.5 ? 0 : (u < 0.75 ? 90 : 270);
  return a;
}

/// Canny maps of hr resized to 2x, 4x and 8x the LR size.
inline std::array<EdgeMap, 3> edge_maps(const ImageF& hr, const ThresholdPolicy& policy) {
  std::array<EdgeMap, 3> out;
  for (int i = 0; i < 3; ++i) {
    const int size = kLrSize << (i + 1);
    out[i] = canny(resize(hr, size, size), policy);
  }
  return out;
}

/// Edge-map cache keyed by a hash of the HR pixels, so a changed image can
/// never pick up another image's targets.
class EdgeCache {
 public:
  explicit EdgeCache(ThresholdPolicy policy, std::size_t capacity = 4096) : policy_(policy), capacity_(capacity) {}

  const std::array<EdgeMap, 3>& get(const ImageF& hr) {
    const Key k = key(hr);
    auto it = map_.find(k);
    if (it != map_.end()) {
      ++hits_;
      return it->second;
    }
    if (map_.size() >= capacity_) map_.clear();
    return map_.emplace(k, edge_maps(hr, policy_)).first->second;
  }

  std::size_t hits() const { return hits_; }
  std::size_t size() const { return map_.size(); }

  struct Key {
    std::uint64_t a, b;
    bool operator==(const Key&) const = default;
  };

  /// Two independent 64-bit FNV-1a hashes over the dimensions and pixel bytes.
  static Key key(const ImageF& img) {
    std::uint64_t a = 0xcbf29ce484222325ull, b = 0x84222325cbf29ce4ull;
    auto feed = [&](const void* p, std::size_t n) {
      const auto* c = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        a = (a ^ c[i]) * 0x100000001b3ull;
        b = (b ^ c[i]) * 0x100000001b3ull + 0x9e3779b97f4a7c15ull;
      }
    };
    feed(&img.height, sizeof img.height);
    feed(&img.width, sizeof img.width);
    feed(img.values.data(), img.values.size() * sizeof(float));
    return {a, b};
  }

 private:
  struct Hash {
    std::size_t operator()(const Key& k) const { return static_cast<std::size_t>(k.a ^ (k.b * 31)); }
  };
  ThresholdPolicy policy_;
  std::size_t capacity_;
  std::unordered_map<Key, std::array<EdgeMap, 3>, Hash> map_;
  std::size_t hits_ = 0;
};

/// Training example from an already cropped and resized 128 x 128 HR image.
/// `cache` may be null (targets computed directly) and `with_edges = false`
/// leaves the edge maps empty.
inline TrainExample make_example_from_hr(const ImageF& hr128, Philox& rng, bool with_edges, EdgeCache* cache,
                                         const ThresholdPolicy& policy = ThresholdPolicy::adaptive(1.6)) {
  const Augmentation a = draw_augmentation(rng);
  TrainExample ex;
  ex.flipped = a.flip;
  ex.rotation = a.rotation;
  ex.hr = rotate(a.flip ? flip_horizontal(hr128) : hr128, a.rotation);
  ex.lr = progressive_lr(ex.hr);
  if (with_edges) ex.edges = cache ? cache->get(ex.hr) : edge_maps(ex.hr, policy);
  return ex;
}

/// Crop, resize, flip, rotate, progressive LR and edge targets.
inline TrainExample make_example(const ImageF& raw, CropPolicy crop, Philox& rng,
                                 const ThresholdPolicy& policy = ThresholdPolicy::adaptive(1.6)) {
  return make_example_from_hr(prepare_hr(raw, crop), rng, true, nullptr, policy);
}

struct TestExample {
  ImageF lr;
  ImageF hr;
};

/// Crop and resize only; LR is one direct bilinear 128 -> 16 resize.
inline TestExample test_example(const ImageF& raw, CropPolicy crop) {
  TestExample ex;
  ex.hr = prepare_hr(raw, crop);
  ex.lr = resize(ex.hr, kLrSize, kLrSize);
  return ex;
}

/// Bilinear 8x upsampling of an LR image: the evaluation baseline.
inline ImageF bilinear_baseline(const ImageF& lr) { return resize(lr, lr.height * 8, lr.width * 8); }

/// Item order for one epoch: Fisher-Yates driven by Philox keyed on
/// (seed, epoch), cut into batches; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t count, int batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (count == 0) throw ValueError("batches: empty dataset");
  if (batch_size < 1) throw ValueError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Philox rng(seed, stream_id(0x73687566, epoch));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < count; b += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, b + batch_size)));
  return out;
}

/// Endless batch stream: epoch after epoch of `batches`. Each example's
/// augmentation draws from a Philox stream keyed on (seed, epoch, slot).
class BatchStream {
 public:
  BatchStream(std::size_t count, int batch_size, std::uint64_t seed)
      : count_(count), batch_size_(batch_size), seed_(seed) {
    epoch_batches_ = batches(count_, batch_size_, seed_, 0);
  }

  struct Batch {
    std::vector<std::size_t> items;
    std::uint64_t epoch = 0;
    std::size_t first_slot = 0;  ///< position of items[0] within the epoch
  };

  Batch next() {
    if (index_ == epoch_batches_.size()) {
      ++epoch_;
      index_ = 0;
      slot_ = 0;
      epoch_batches_ = batches(count_, batch_size_, seed_, epoch_);
    }
    Batch b{epoch_batches_[index_++], epoch_, slot_};
    slot_ += b.items.size();
    return b;
  }

  Philox example_rng(const Batch& b, std::size_t i) const {
    return Philox(seed_, stream_id(0x61756731, b.epoch, b.first_slot + i));
  }

 private:
  std::size_t count_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t index_ = 0;
  std::size_t slot_ = 0;
  std::vector<std::vector<std::size_t>> epoch_batches_;
};

/// Images of a manifest cropped and resized to 128 x 128. Undersized images
/// are skipped and reported in `skipped`.
struct HrDataset {
  std::vector<ImageF> hr;
  std::vector<int> identity;
  std::vector<std::string> names;
  std::vector<std::optional<BBox>> bbox;
  std::vector<std::string> skipped;
};

inline HrDataset load_hr_dataset(const Manifest& m) {
  HrDataset d;
  const auto labels = m.identity_labels();
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const ImageF raw = to_float(read_image(r.path));
    try {
      d.hr.push_back(prepare_hr(raw, m.crop));
    } catch (const UndersizedImage& e) {
      d.skipped.push_back(r.path.string() + ": " + e.what());
      continue;
    }
    d.identity.push_back(labels[i]);
    d.names.push_back(r.path.stem().string());
    d.bbox.push_back(r.bbox);
  }
  return d;
}

}  // namespace eipnet
