#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "eipnet/error.hpp"
#include "eipnet/image.hpp"

namespace eipnet {

/// Single-channel double image.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
    if (h < 1 || w < 1) throw ValueError("gray image dimensions must be positive");
  }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Binary edge map, values 0 or 1.
struct EdgeMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  EdgeMap() = default;
  EdgeMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1)); }
  bool operator==(const EdgeMap&) const = default;
};

struct ThresholdPolicy {
  enum class Mode { fixed, adaptive };
  Mode mode = Mode::adaptive;
  double low = 100.0;
  double high = 255.0;
  double k_high = 1.6;

  static ThresholdPolicy fixed(double low, double high) {
    if (!(low >= 0.0 && low <= high)) throw ValueError("canny thresholds must satisfy 0 <= low <= high");
    return {Mode::fixed, low, high, 1.6};
  }
  static ThresholdPolicy adaptive(double k_high = 1.6) {
    if (!std::isfinite(k_high)) throw ValueError("canny k_high must be finite");
    return {Mode::adaptive, 100.0, 255.0, k_high};
  }
};

struct Thresholds {
  double low = 0.0;
  double high = 0.0;
};

/// T_h = mean + k * std, T_l = T_h / 2.
inline Thresholds thresholds_from_stats(double mean, double stddev, double k_high) {
  const double high = mean + k_high * stddev;
  return {high / 2.0, high};
}

/// Thresholds from the mean and population standard deviation of a gradient
/// magnitude image.
inline Thresholds adaptive_thresholds(const GrayImage& magnitude, double k_high = 1.6) {
  if (magnitude.values.empty()) throw ValueError("adaptive_thresholds: empty image");
  const double n = static_cast<double>(magnitude.values.size());
  double sum = 0.0;
  for (double v : magnitude.values) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : magnitude.values) sq += (v - mean) * (v - mean);
  return thresholds_from_stats(mean, std::sqrt(sq / n), k_high);
}

/// Luma rounded to whole 8-bit levels.
inline GrayImage to_gray(const ImageU8& img) {
  GrayImage g(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g.at(y, x) = std::round(luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)));
  return g;
}

inline GrayImage to_gray(const ImageF& img) {
  if (img.space != ColorSpace::rgb) throw ValueError("to_gray: input is not RGB");
  GrayImage g(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double l = luma(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
      g.at(y, x) = std::round(std::clamp(l, 0.0, 1.0) * 255.0);
    }
  return g;
}

/// Intermediate products, exposed for inspection and tests.
struct CannyStages {
  GrayImage magnitude;  ///< Sobel magnitude of the blurred image, 8-bit gradient scale.
  GrayImage suppressed;  ///< Magnitude where NMS kept the pixel, 0 elsewhere.
  Thresholds thresholds;
  EdgeMap edges;
};

namespace detail {

// Classical 5x5 integer approximation of a Gaussian with sigma 1.4; weights
// sum to 159. Kept as integers so integer-valued gray levels blur and
// differentiate without rounding (the 1/159 is applied to the magnitude).
inline constexpr std::array<std::array<int, 5>, 5> kCannyGauss{{
    {2, 4, 5, 4, 2},
    {4, 9, 12, 9, 4},
    {5, 12, 15, 12, 5},
    {4, 9, 12, 9, 4},
    {2, 4, 5, 4, 2},
}};
inline constexpr double kCannyGaussSum = 159.0;

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

}  // namespace detail

/// Gradient magnitude of the blurred image (replicate borders throughout).
inline void canny_gradients(const GrayImage& gray, GrayImage& gx, GrayImage& gy, GrayImage& magnitude) {
  const int h = gray.height, w = gray.width;
  GrayImage blurred(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          acc += detail::kCannyGauss[dy + 2][dx + 2] *
                 gray.at(detail::clamp_index(y + dy, h), detail::clamp_index(x + dx, w));
      blurred.at(y, x) = acc;
    }
  gx = GrayImage(h, w);
  gy = GrayImage(h, w);
  magnitude = GrayImage(h, w);
  for (int y = 0; y < h; ++y) {
    const int ym = detail::clamp_index(y - 1, h), yp = detail::clamp_index(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xm = detail::clamp_index(x - 1, w), xp = detail::clamp_index(x + 1, w);
      const double sx = (blurred.at(ym, xp) + 2 * blurred.at(y, xp) + blurred.at(yp, xp)) -
                        (blurred.at(ym, xm) + 2 * blurred.at(y, xm) + blurred.at(yp, xm));
      const double sy = (blurred.at(yp, xm) + 2 * blurred.at(yp, x) + blurred.at(yp, xp)) -
                        (blurred.at(ym, xm) + 2 * blurred.at(ym, x) + blurred.at(ym, xp));
      gx.at(y, x) = sx;
      gy.at(y, x) = sy;
      magnitude.at(y, x) = std::sqrt(sx * sx + sy * sy) / detail::kCannyGaussSum;
    }
  }
}

/// Full pipeline: blur, Sobel, four-direction non-maximum suppression,
/// double threshold (strict) and 8-connected hysteresis.
inline CannyStages canny_stages(const GrayImage& gray, const ThresholdPolicy& policy = {}) {
  const int h = gray.height, w = gray.width;
  CannyStages st;
  GrayImage gx, gy;
  canny_gradients(gray, gx, gy, st.magnitude);
  st.thresholds = policy.mode == ThresholdPolicy::Mode::fixed ? Thresholds{policy.low, policy.high}
                                                              : adaptive_thresholds(st.magnitude, policy.k_high);

  const GrayImage& m = st.magnitude;
  auto mag = [&](int y, int x) { return y < 0 || y >= h || x < 0 || x >= w ? 0.0 : m.at(y, x); };
  static const double tan22 = std::tan(M_PI / 8.0);
  static const double tan67 = std::tan(3.0 * M_PI / 8.0);
  st.suppressed = GrayImage(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = m.at(y, x);
      if (v == 0.0) continue;
      const double ax = std::abs(gx.at(y, x)), ay = std::abs(gy.at(y, x));
      // (dy, dx) of the neighbour that comes first along the gradient line.
      int dy, dx;
      if (ay <= ax * tan22) {
        dy = 0, dx = -1;
      } else if (ay >= ax * tan67) {
        dy = -1, dx = 0;
      } else if ((gx.at(y, x) > 0) == (gy.at(y, x) > 0)) {
        dy = -1, dx = -1;
      } else {
        dy = -1, dx = 1;
      }
      // Ties keep the first pixel along the line, so plateaus thin to one.
      if (v > mag(y + dy, x + dx) && v >= mag(y - dy, x - dx)) st.suppressed.at(y, x) = v;
    }

  st.edges = EdgeMap(h, w);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (st.suppressed.at(y, x) > st.thresholds.high) {
        st.edges.at(y, x) = 1;
        stack.emplace_back(y, x);
      }
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w || st.edges.at(ny, nx)) continue;
        if (st.suppressed.at(ny, nx) > st.thresholds.low) {
          st.edges.at(ny, nx) = 1;
          stack.emplace_back(ny, nx);
        }
      }
  }
  return st;
}

inline EdgeMap canny(const GrayImage& gray, const ThresholdPolicy& policy = {}) {
  return canny_stages(gray, policy).edges;
}
inline EdgeMap canny(const ImageU8& img, const ThresholdPolicy& policy = {}) { return canny(to_gray(img), policy); }
inline EdgeMap canny(const ImageF& img, const ThresholdPolicy& policy = {}) { return canny(to_gray(img), policy); }

/// 0/255 gray rendering of an edge map.
inline ImageU8 edges_to_image(const EdgeMap& e) {
  ImageU8 out(e.height, e.width);
  for (int y = 0; y < e.height; ++y)
    for (int x = 0; x < e.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = e.at(y, x) ? 255 : 0;
  return out;
}

}  // namespace eipnet
