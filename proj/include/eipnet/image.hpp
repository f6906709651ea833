#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "eipnet/error.hpp"
#include "eipnet/tensor.hpp"

namespace eipnet {

/// 8-bit RGB image, row-major interleaved triples.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 1 || w < 1) throw ValueError("image dimensions must be positive");
  }

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const ImageU8&) const = default;
};

enum class ColorSpace { rgb, yuv };

/// Three-channel floating-point image stored as planes. RGB values live in
/// [0, 1]; YUV values are unbounded.
struct ImageF {
  int height = 0;
  int width = 0;
  ColorSpace space = ColorSpace::rgb;
  std::vector<float> values;

  ImageF() = default;
  ImageF(int h, int w, ColorSpace cs = ColorSpace::rgb, float fill = 0.0f)
      : height(h), width(w), space(cs), values(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 1 || w < 1) throw ValueError("image dimensions must be positive");
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float* plane(int c) { return values.data() + c * plane_size(); }
  const float* plane(int c) const { return values.data() + c * plane_size(); }
  bool operator==(const ImageF&) const = default;
};

using Matrix3 = std::array<std::array<double, 3>, 3>;

/// RGB -> YUV conversion matrix, all printed digits.
inline constexpr Matrix3 kRgbToYuv{{
    {0.299, 0.587, 0.114},
    {-0.14713, -0.28886, 0.436},
    {0.615, -0.51499, -0.10001},
}};

/// Numeric inverse of kRgbToYuv, computed once in double precision.
inline const Matrix3& yuv_to_rgb_matrix() {
  static const Matrix3 inv = [] {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = kRgbToYuv[r][c];
    const Eigen::Matrix3d i = m.inverse();
    Matrix3 out{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[r][c] = i(r, c);
    return out;
  }();
  return inv;
}

inline std::array<double, 3> apply(const Matrix3& m, std::array<double, 3> v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

namespace detail {
inline ImageF transform_pixels(const ImageF& img, const Matrix3& m, ColorSpace to) {
  ImageF out(img.height, img.width, to);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto v = apply(m, {img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(v[c]);
    }
  return out;
}
}  // namespace detail

inline ImageF rgb_to_yuv(const ImageF& img) {
  if (img.space != ColorSpace::rgb) throw ValueError("rgb_to_yuv: input is not RGB");
  return detail::transform_pixels(img, kRgbToYuv, ColorSpace::yuv);
}

inline ImageF yuv_to_rgb(const ImageF& img) {
  if (img.space != ColorSpace::yuv) throw ValueError("yuv_to_rgb: input is not YUV");
  return detail::transform_pixels(img, yuv_to_rgb_matrix(), ColorSpace::rgb);
}

/// ITU-R BT.601 luma weights (first row of kRgbToYuv).
inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline ImageF to_float(const ImageU8& img) {
  ImageF out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return out;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline ImageU8 to_u8(const ImageF& img) {
  if (img.space != ColorSpace::rgb) throw ValueError("to_u8: input is not RGB");
  ImageU8 out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(img.at(c, y, x));
  return out;
}

/// Copies an image into batch slot `n` of a (N, 3, H, W) tensor.
template <class T>
void store(const ImageF& img, Tensor<T>& dst, int n) {
  const Shape s = dst.shape();
  if (s.c != 3 || s.h != img.height || s.w != img.width) {
    throw ShapeError("store: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " does not fit tensor " + s.str());
  }
  std::transform(img.values.begin(), img.values.end(), dst.item(n), [](float v) { return static_cast<T>(v); });
}

template <class T>
Tensor<T> to_tensor(const ImageF& img) {
  Tensor<T> out({1, 3, img.height, img.width});
  store(img, out, 0);
  return out;
}

template <class T>
ImageF from_tensor(const Tensor<T>& t, int n = 0, ColorSpace cs = ColorSpace::rgb) {
  const Shape s = t.shape();
  if (s.c != 3) throw ShapeError("from_tensor: expected 3 channels, got " + s.str());
  ImageF out(s.h, s.w, cs);
  std::transform(t.item(n), t.item(n) + s.item(), out.values.begin(), [](T v) { return static_cast<float>(v); });
  return out;
}

enum class ResizeMethod { bilinear, bicubic };

namespace detail {

// Linear interpolation that is exact on constants (a == b gives a) and
// mirror-symmetric: lerp(a, b, f) == lerp(b, a, 1 - f) bit for bit.
inline double sym_lerp(double a, double b, double f) {
  if (f == 0.5) return (a + b) * 0.5;
  if (f < 0.5) return a + f * (b - a);
  return b + (1.0 - f) * (a - b);
}

inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

// Resamples one line of `in_len` samples (spaced by `stride`) to `out_len`
// using the pixel-center convention.
inline void resample_line(const float* in, std::ptrdiff_t in_stride, int in_len, float* out, std::ptrdiff_t out_stride,
                          int out_len, ResizeMethod method) {
  const double ratio = static_cast<double>(in_len) / out_len;
  for (int i = 0; i < out_len; ++i) {
    const double pos = (i + 0.5) * ratio - 0.5;
    const double base = std::floor(pos);
    const double f = pos - base;
    const int i0 = static_cast<int>(base);
    auto sample = [&](int j) { return static_cast<double>(in[std::clamp(j, 0, in_len - 1) * in_stride]); };
    double v;
    if (method == ResizeMethod::bilinear) {
      v = sym_lerp(sample(i0), sample(i0 + 1), f);
    } else {
      const double center = sample(i0);
      double acc = 0.0;
      for (int k = -1; k <= 2; ++k) acc += cubic_weight(f - k) * (sample(i0 + k) - center);
      v = center + acc;
    }
    out[i * out_stride] = static_cast<float>(v);
  }
}

}  // namespace detail

/// Separable resize: rows first, then columns. Bilinear uses half-pixel
/// centers (align_corners = false); bicubic is Catmull-Rom (a = -0.5) with
/// clamped edges.
inline ImageF resize(const ImageF& img, int out_h, int out_w, ResizeMethod method = ResizeMethod::bilinear) {
  if (out_h < 1 || out_w < 1) throw ValueError("resize: output dimensions must be >= 1");
  if (out_h == img.height && out_w == img.width) return img;
  ImageF mid(img.height, out_w, img.space);
  ImageF out(out_h, out_w, img.space);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y)
      detail::resample_line(img.plane(c) + static_cast<std::ptrdiff_t>(y) * img.width, 1, img.width,
                            mid.plane(c) + static_cast<std::ptrdiff_t>(y) * out_w, 1, out_w, method);
    for (int x = 0; x < out_w; ++x)
      detail::resample_line(mid.plane(c) + x, out_w, img.height, out.plane(c) + x, out_w, out_h, method);
  }
  return out;
}

/// Center crop with floor offsets on odd remainders.
inline ImageF center_crop(const ImageF& img, int crop_h, int crop_w) {
  if (crop_h > img.height || crop_w > img.width || crop_h < 1 || crop_w < 1) {
    throw ValueError("center_crop: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                     " does not fit image " + std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  const int top = (img.height - crop_h) / 2;
  const int left = (img.width - crop_w) / 2;
  ImageF out(crop_h, crop_w, img.space);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop_h; ++y)
      for (int x = 0; x < crop_w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
  return out;
}

inline ImageF flip_horizontal(const ImageF& img) {
  ImageF out(img.height, img.width, img.space);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

/// Counter-clockwise rotation by 0, 90, 180 or 270 degrees.
inline ImageF rotate(const ImageF& img, int degrees) {
  switch (degrees) {
    case 0:
      return img;
    case 90: {
      ImageF out(img.width, img.height, img.space);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height; ++y)
          for (int x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, x, img.width - 1 - y);
      return out;
    }
    case 180:
      return rotate(rotate(img, 90), 90);
    case 270: {
      ImageF out(img.width, img.height, img.space);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height; ++y)
          for (int x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - x, y);
      return out;
    }
    default:
      throw ValueError("rotate: unsupported angle " + std::to_string(degrees));
  }
}

struct AugmentSpec {
  int center_crop_size = 0;  ///< 0 disables cropping.
  bool flip = false;
  int rotation = 0;  ///< 0, 90 or 270.
};

/// Crop, then optional horizontal flip, then rotation.
inline ImageF augment(const ImageF& img, const AugmentSpec& spec) {
  if (spec.rotation != 0 && spec.rotation != 90 && spec.rotation != 270) {
    throw ValueError("augment: rotation must be 0, 90 or 270");
  }
  ImageF out = spec.center_crop_size > 0 ? center_crop(img, spec.center_crop_size, spec.center_crop_size) : img;
  if (spec.flip) out = flip_horizontal(out);
  return rotate(out, spec.rotation);
}

}  // namespace eipnet
