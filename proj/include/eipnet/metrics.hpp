#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eipnet/data.hpp"
#include "eipnet/embedder.hpp"
#include "eipnet/image.hpp"

namespace eipnet {

inline constexpr double kPsnrCap = 99.0;

namespace detail {

inline void require_same_size(const ImageU8& a, const ImageU8& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

inline ImageU8 crop(const ImageU8& img, const BBox& b) {
  ImageU8 out(b.bottom - b.top, b.right - b.left);
  for (int y = b.top; y < b.bottom; ++y)
    for (int x = b.left; x < b.right; ++x)
      for (int c = 0; c < 3; ++c) out.at(y - b.top, x - b.left, c) = img.at(y, x, c);
  return out;
}

}  // namespace detail

/// PSNR over all RGB samples on the 8-bit scale; identical images give the cap.
inline double psnr(const ImageU8& a, const ImageU8& b) {
  detail::require_same_size(a, b, "psnr");
  double sq = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    sq += d * d;
  }
  if (sq == 0) return kPsnrCap;
  const double mse = sq / static_cast<double>(a.pixels.size());
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 255.0;
};

/// SSIM on BT.601 luma (unrounded) with a Gaussian window, averaged over all
/// window positions that fit inside the image.
inline double ssim(const ImageU8& a, const ImageU8& b, const SsimOptions& o = {}) {
  detail::require_same_size(a, b, "ssim");
  const int win = o.window;
  if (a.height < win || a.width < win) {
    throw ShapeError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " smaller than the " + std::to_string(win) + "x" + std::to_string(win) + " window");
  }
  const int h = a.height, w = a.width;
  auto luma_of = [&](const ImageU8& img) {
    std::vector<double> l(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        l[static_cast<std::size_t>(y) * w + x] =
            kRgbToYuv[0][0] * img.at(y, x, 0) + kRgbToYuv[0][1] * img.at(y, x, 1) + kRgbToYuv[0][2] * img.at(y, x, 2);
    return l;
  };
  const auto la = luma_of(a), lb = luma_of(b);
  std::vector<double> g(win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    gs += g[i] = std::exp(-d * d / (2 * o.sigma * o.sigma));
  }
  for (double& v : g) v /= gs;
  const double c1 = (o.k1 * o.range) * (o.k1 * o.range);
  const double c2 = (o.k2 * o.range) * (o.k2 * o.range);
  double total = 0;
  const int oh = h - win + 1, ow = w - win + 1;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          const double wt = g[dy] * g[dx];
          const std::size_t i = static_cast<std::size_t>(y + dy) * w + (x + dx);
          ma += wt * la[i];
          mb += wt * lb[i];
          saa += wt * la[i] * la[i];
          sbb += wt * lb[i] * lb[i];
          sab += wt * (la[i] * lb[i]);
        }
      const double va = std::max(0.0, saa - ma * ma), vb = std::max(0.0, sbb - mb * mb), cov = sab - ma * mb;
      total += ((2 * (ma * mb) + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / (static_cast<double>(oh) * ow);
}

struct FrResult {
  std::optional<double> psnr;
  std::optional<double> ssim;
};

/// PSNR / SSIM on the HR-frame box applied to both images; no box, no values.
inline FrResult fr_metrics(const ImageU8& sr, const ImageU8& hr, const std::optional<BBox>& box) {
  detail::require_same_size(sr, hr, "fr_metrics");
  if (!box) return {};
  box->check(hr.height, hr.width);
  const ImageU8 a = detail::crop(sr, *box), b = detail::crop(hr, *box);
  FrResult r;
  r.psnr = psnr(a, b);
  if (a.height >= SsimOptions{}.window && a.width >= SsimOptions{}.window) r.ssim = ssim(a, b);
  return r;
}

/// name -> HR-frame box; names without a line have no detected face.
using BBoxSidecar = std::map<std::string, BBox>;

inline BBoxSidecar parse_bbox_sidecar(const std::string& text) {
  BBoxSidecar out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError("bbox sidecar line " + std::to_string(lineno) + ": expected name<TAB>top,right,bottom,left");
    }
    try {
      if (!out.emplace(line.substr(0, tab), parse_bbox(line.substr(tab + 1))).second) {
        throw FormatError("duplicate name " + line.substr(0, tab));
      }
    } catch (const FormatError& e) {
      throw FormatError("bbox sidecar line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct MetricsRow {
  std::string name;
  double psnr = 0;
  double ssim = 0;
  std::optional<double> fr_psnr;
  std::optional<double> fr_ssim;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::size_t discarded = 0;  ///< images without a face box

  std::size_t fr_evaluated() const { return rows.size() - discarded; }

  double mean_psnr() const {
    double s = 0;
    for (const auto& r : rows) s += r.psnr;
    return rows.empty() ? 0 : s / static_cast<double>(rows.size());
  }
  double mean_ssim() const {
    double s = 0;
    for (const auto& r : rows) s += r.ssim;
    return rows.empty() ? 0 : s / static_cast<double>(rows.size());
  }
  std::optional<double> mean_fr_psnr() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.fr_psnr) s += *r.fr_psnr, ++n;
    return n ? std::optional(s / static_cast<double>(n)) : std::nullopt;
  }
  std::optional<double> mean_fr_ssim() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.fr_ssim) s += *r.fr_ssim, ++n;
    return n ? std::optional(s / static_cast<double>(n)) : std::nullopt;
  }

  void add(const std::string& name, const ImageU8& sr, const ImageU8& hr, const std::optional<BBox>& box) {
    MetricsRow r{name, psnr(sr, hr), ssim(sr, hr), {}, {}};
    const FrResult fr = fr_metrics(sr, hr, box);
    r.fr_psnr = fr.psnr;
    r.fr_ssim = fr.ssim;
    if (!box) ++discarded;
    rows.push_back(std::move(r));
  }

  std::string csv() const {
    std::string out = "# PSNR over RGB samples jointly (8-bit, cap 99); SSIM on luma, 11x11 Gaussian sigma 1.5\n";
    out += "name,psnr,ssim,fr_psnr,fr_ssim\n";
    char buf[64];
    auto opt = [&](const std::optional<double>& v) {
      if (!v) return std::string();
      std::snprintf(buf, sizeof buf, "%.6f", *v);
      return std::string(buf);
    };
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.psnr, r.ssim);
      out += r.name + "," + buf + "," + opt(r.fr_psnr) + "," + opt(r.fr_ssim) + "\n";
    }
    return out;
  }

  std::string summary() const {
    char buf[256];
    auto opt = [](const std::optional<double>& v) { return v ? *v : std::nan(""); };
    std::snprintf(buf, sizeof buf, "images %zu  PSNR %.4f  SSIM %.4f  FR-PSNR %.4f  FR-SSIM %.4f  (FR evaluated %zu, discarded %zu)",
                  rows.size(), mean_psnr(), mean_ssim(), opt(mean_fr_psnr()), opt(mean_fr_ssim()), fr_evaluated(),
                  discarded);
    return buf;
  }
};

enum class TarMode { euclidean, squared };

inline double embedding_distance(const std::vector<double>& a, const std::vector<double>& b, TarMode mode) {
  if (a.size() != b.size()) throw ShapeError("embedding lengths differ");
  if (mode == TarMode::euclidean) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) na += a[i] * a[i], nb += b[i] * b[i];
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0 || nb == 0) throw ValueError("squared TAR needs non-zero embeddings");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] / na - b[i] / nb;
    s += d * d;
  }
  return s;
}

/// Percentage of same-named pairs whose distance is strictly below d.
inline double tar(const Embeddings& a, const Embeddings& b, double d, TarMode mode) {
  if (a.size() != b.size()) {
    throw ValueError("tar: sets differ in size (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() == 0) throw ValueError("tar: empty embedding sets");
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!b.contains(a.names[i])) throw ValueError("tar: no embedding named " + a.names[i] + " in the second set");
    accepted += embedding_distance(a.vectors[i], b.at(a.names[i]), mode) < d;
  }
  return 100.0 * static_cast<double>(accepted) / static_cast<double>(a.size());
}

}  // namespace eipnet
