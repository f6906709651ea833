#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eipnet/image_io.hpp"
#include "eipnet/params.hpp"

namespace eipnet {

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnknownTensorError : public FormatError {
 public:
  using FormatError::FormatError;
};
class MissingTensorError : public FormatError {
 public:
  using FormatError::FormatError;
};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float tensors plus the iteration counter and a config snapshot.
///
/// Layout (little endian): "EIPN", u32 version, u64 iteration,
/// u32 length + config text, u32 entry count, then per entry
/// u32 length + name, u32 rank (always 4), 4 x u32 dims, f32 data.
struct Checkpoint {
  std::uint64_t iteration = 0;
  std::string config;
  ParamSet<float> tensors;
};

namespace detail {

class ByteWriter {
 public:
  template <class V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof v);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  template <class V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes = {'E', 'I', 'P', 'N'};
  w.put(kCheckpointVersion);
  w.put(ck.iteration);
  w.put_string(ck.config);
  w.put(static_cast<std::uint32_t>(ck.tensors.size()));
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const auto& v = ck.tensors.value(i);
    w.put_string(ck.tensors.name(i));
    w.put(std::uint32_t{4});
    const Shape s = v.shape();
    for (int d : {s.n, s.c, s.h, s.w}) w.put(static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.ptr());
    w.bytes.insert(w.bytes.end(), p, p + v.size() * sizeof(float));
  }
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EIPN", 4) != 0) {
    throw BadMagicError("checkpoint: bad magic bytes at offset 0 (expected \"EIPN\")");
  }
  detail::ByteReader r(bytes.subspan(4));
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.iteration = r.get<std::uint64_t>("iteration");
  ck.config = r.get_string("config");
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string("tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank != 4) throw FormatError("checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    std::array<std::uint32_t, 4> d{};
    for (auto& x : d) x = r.get<std::uint32_t>("tensor shape");
    for (auto x : d)
      if (x > (1u << 30)) throw FormatError("checkpoint: tensor " + name + " has an implausible extent");
    Tensor<float> v(Shape{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
                          static_cast<int>(d[3])});
    r.get_floats(v.ptr(), v.size(), "tensor data");
    ck.tensors.add(std::move(name), std::move(v));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.pos() + 4));
  return ck;
}

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// half-written checkpoint under the final name.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto tmp = path;
  tmp += ".tmp";
  write_bytes(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("checkpoint not found: " + path.string());
  return decode_checkpoint(read_bytes(path));
}

/// Stores `params` under "prefix/name".
template <class T>
void put_params(Checkpoint& ck, const std::string& prefix, const ParamSet<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    ck.tensors.add(prefix + "/" + params.name(i), params.value(i).template cast<float>());
}

inline bool has_prefix(const Checkpoint& ck, const std::string& prefix) {
  for (std::size_t i = 0; i < ck.tensors.size(); ++i)
    if (ck.tensors.name(i).starts_with(prefix + "/")) return true;
  return false;
}

/// Extracts the parameters of `layers` stored under `prefix`. Every layer
/// must be present with the expected shape, and no other tensor may carry
/// the prefix.
template <class T>
ParamSet<T> take_params(const Checkpoint& ck, const std::string& prefix, const std::vector<LayerDesc>& layers) {
  ParamSet<T> expected = zero_params<T>(layers);
  const std::string pre = prefix + "/";
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const std::string& name = ck.tensors.name(i);
    if (name.starts_with(pre) && !expected.contains(name.substr(pre.size()))) {
      throw UnknownTensorError("checkpoint: unknown tensor " + name);
    }
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string full = pre + expected.name(i);
    if (!ck.tensors.contains(full)) throw MissingTensorError("checkpoint: missing layer tensor " + full);
    const auto& v = ck.tensors.at(full);
    if (v.shape() != expected.value(i).shape()) {
      throw ShapeError("checkpoint: tensor " + full + " has shape " + v.shape().str() + ", expected " +
                       expected.value(i).shape().str());
    }
    expected.value(i) = v.template cast<T>();
  }
  return expected;
}

}  // namespace eipnet
