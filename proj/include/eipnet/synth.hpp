#pragma once

// Procedural face-like images for desk-scale training and tests. Each
// identity fixes the face geometry and colouring; each variant perturbs
// pose, lighting, expression and background.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "eipnet/data.hpp"
#include "eipnet/image.hpp"
#include "eipnet/image_io.hpp"
#include "eipnet/philox.hpp"

namespace eipnet {

namespace detail {

using Rgb = std::array<double, 3>;

struct FaceIdentity {
  Rgb skin, hair, iris, lips, brow;
  double face_rx, face_ry;
  double hair_extra;     // hair ellipse growth beyond the face
  double fringe;         // how far the fringe reaches down the forehead
  double eye_dx, eye_y, eye_rx, eye_ry;
  double brow_gap, brow_thick, brow_tilt;
  double nose_len, nose_w;
  double mouth_y, mouth_w, lip_h;
  bool glasses;
  double freckles;
};

struct FaceVariant {
  double cx, cy, scale, tilt;
  double light;   // horizontal lighting gradient
  double smile;
  double open;    // eye openness
  double gaze;
  Rgb bg_top, bg_bottom;
  std::uint64_t texture_seed;
};

inline Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

inline Rgb scaled(const Rgb& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

inline Rgb random_color(Philox& r, double lo, double hi) {
  return {r.uniform(lo, hi), r.uniform(lo, hi), r.uniform(lo, hi)};
}

inline FaceIdentity draw_identity(Philox& r) {
  FaceIdentity f;
  static constexpr std::array<Rgb, 5> skins{
      {{0.96, 0.80, 0.69}, {0.89, 0.69, 0.55}, {0.76, 0.57, 0.42}, {0.55, 0.38, 0.26}, {0.38, 0.26, 0.18}}};
  static constexpr std::array<Rgb, 6> hairs{{{0.08, 0.06, 0.05},
                                             {0.30, 0.18, 0.10},
                                             {0.55, 0.35, 0.18},
                                             {0.85, 0.70, 0.40},
                                             {0.60, 0.25, 0.10},
                                             {0.70, 0.70, 0.72}}};
  f.skin = mix(skins[r.below(skins.size())], random_color(r, 0.3, 1.0), 0.12);
  f.hair = mix(hairs[r.below(hairs.size())], random_color(r, 0.0, 1.0), 0.1);
  f.iris = random_color(r, 0.1, 0.6);
  f.lips = mix({0.75, 0.35, 0.38}, f.skin, r.uniform(0.1, 0.5));
  f.brow = mix(f.hair, {0.05, 0.04, 0.03}, r.uniform(0.2, 0.7));
  f.face_rx = r.uniform(44, 56);
  f.face_ry = r.uniform(58, 70);
  f.hair_extra = r.uniform(3, 16);
  f.fringe = r.uniform(0.15, 0.45);
  f.eye_dx = r.uniform(17, 23);
  f.eye_y = r.uniform(-14, -6);
  f.eye_rx = r.uniform(7, 10);
  f.eye_ry = r.uniform(3.5, 5.5);
  f.brow_gap = r.uniform(8, 12);
  f.brow_thick = r.uniform(1.5, 3.5);
  f.brow_tilt = r.uniform(-0.15, 0.15);
  f.nose_len = r.uniform(14, 24);
  f.nose_w = r.uniform(5, 9);
  f.mouth_y = r.uniform(24, 34);
  f.mouth_w = r.uniform(13, 21);
  f.lip_h = r.uniform(3, 6);
  f.glasses = r.bernoulli(0.25);
  f.freckles = r.bernoulli(0.3) ? r.uniform(0.03, 0.08) : 0.0;
  return f;
}

inline FaceVariant draw_variant(Philox& r) {
  FaceVariant v;
  v.cx = r.uniform(-6, 6);
  v.cy = r.uniform(-6, 6);
  v.scale = r.uniform(0.94, 1.06);
  v.tilt = r.uniform(-0.09, 0.09);
  v.light = r.uniform(-0.25, 0.25);
  v.smile = r.uniform(-0.3, 1.0);
  v.open = r.uniform(0.6, 1.0);
  v.gaze = r.uniform(-0.35, 0.35);
  v.bg_top = random_color(r, 0.15, 0.95);
  v.bg_bottom = random_color(r, 0.15, 0.95);
  v.texture_seed = r.next_u64();
  return v;
}

// Coverage of an ellipse at a point, with a one-pixel soft edge.
inline double ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
  return std::clamp(0.5 - d, 0.0, 1.0);
}

// Smooth value noise on a coarse lattice, in [0, 1].
inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  auto lattice = [&](double i, double j) {
    const auto out = Philox::block({static_cast<std::uint32_t>(static_cast<std::int64_t>(i)),
                                    static_cast<std::uint32_t>(static_cast<std::int64_t>(j)), 0, 0},
                                   {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
    return out[0] * 0x1.0p-32;
  };
  auto fade = [](double t) { return t * t * (3 - 2 * t); };
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double a = lattice(fx, fy), b = lattice(fx + 1, fy), c = lattice(fx, fy + 1), d = lattice(fx + 1, fy + 1);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

}  // namespace detail

inline constexpr int kSynthHeight = 218;
inline constexpr int kSynthWidth = 178;

/// Renders variant `variant` of identity `identity`. `face_box` receives the
/// face ellipse's bounding box in image coordinates.
inline ImageU8 synth_face(std::uint64_t seed, int identity, int variant, BBox* face_box = nullptr) {
  using namespace detail;
  Philox id_rng(seed, stream_id(0x66616365, static_cast<std::uint64_t>(identity)));
  const FaceIdentity f = draw_identity(id_rng);
  Philox var_rng(seed, stream_id(0x76617269, static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(variant)));
  const FaceVariant v = draw_variant(var_rng);

  const int h = kSynthHeight, w = kSynthWidth;
  const double cx = w / 2.0 + v.cx, cy = h / 2.0 + 4 + v.cy;
  const double ct = std::cos(v.tilt), st = std::sin(v.tilt);
  ImageU8 img(h, w);
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      // Face-local coordinates: rotated about the face centre and scaled.
      const double ox = px + 0.5 - cx, oy = py + 0.5 - cy;
      const double x = (ct * ox + st * oy) / v.scale;
      const double y = (-st * ox + ct * oy) / v.scale;

      const double t = (py + 0.5) / h;
      Rgb c = mix(v.bg_top, v.bg_bottom, t);
      c = scaled(c, 0.9 + 0.2 * value_noise(v.texture_seed, px / 23.0, py / 23.0));

      // Hair mass behind the head and shoulders.
      const double hair_back = ellipse(x, y, 0, -8, f.face_rx + f.hair_extra, f.face_ry + f.hair_extra * 0.8);
      c = mix(c, f.hair, hair_back);
      const double shoulders = ellipse(x, y, 0, 118, 78, 42);
      c = mix(c, mix(v.bg_bottom, {0.2, 0.2, 0.25}, 0.6), shoulders);
      const double neck = ellipse(x, y, 0, 64, f.face_rx * 0.45, 34);
      c = mix(c, scaled(f.skin, 0.82), neck);
      for (double side : {-1.0, 1.0}) c = mix(c, scaled(f.skin, 0.9), ellipse(x, y, side * f.face_rx, -4, 7, 12));

      // Face with horizontal lighting and a soft radial falloff.
      const double face = ellipse(x, y, 0, 0, f.face_rx, f.face_ry);
      if (face > 0) {
        const double r2 = (x * x) / (f.face_rx * f.face_rx) + (y * y) / (f.face_ry * f.face_ry);
        double shade = 1.0 + v.light * x / f.face_rx - 0.12 * r2;
        if (f.freckles > 0 && y > -20 && y < 10) {
          const double n = value_noise(v.texture_seed ^ 0x5a5a, x / 2.2, y / 2.2);
          if (n > 0.8) shade -= f.freckles * (n - 0.8) / 0.2;
        }
        Rgb skin = scaled(f.skin, shade);
        // Nose: darker ridge shadow on the side away from the light, nostrils.
        const double ridge = ellipse(x, y, -v.light * 8 + 3, f.eye_y + f.nose_len * 0.6, 2.0, f.nose_len * 0.5);
        skin = mix(skin, scaled(f.skin, 0.8), 0.5 * ridge);
        for (double side : {-1.0, 1.0}) {
          skin = mix(skin, scaled(f.skin, 0.45), ellipse(x, y, side * f.nose_w * 0.5, f.eye_y + f.nose_len + 2, 2.2, 1.4));
        }
        // Mouth: lips bent by the smile, dark line between them.
        const double bend = v.smile * 4.0 * (x / f.mouth_w) * (x / f.mouth_w);
        const double my = f.mouth_y - bend;
        skin = mix(skin, f.lips, ellipse(x, y, 0, my, f.mouth_w, f.lip_h));
        skin = mix(skin, scaled(f.lips, 0.35), ellipse(x, y, 0, my, f.mouth_w * 0.92, 0.9));
        // Eyes and brows.
        for (double side : {-1.0, 1.0}) {
          const double ex = side * f.eye_dx;
          const double ery = f.eye_ry * v.open;
          const double white = ellipse(x, y, ex, f.eye_y, f.eye_rx, ery);
          skin = mix(skin, {0.93, 0.93, 0.9}, white);
          const double iris = ellipse(x, y, ex + v.gaze * f.eye_rx * 0.5, f.eye_y, f.eye_ry * 0.95, f.eye_ry * 0.95);
          skin = mix(skin, f.iris, iris * white);
          const double pupil = ellipse(x, y, ex + v.gaze * f.eye_rx * 0.5, f.eye_y, f.eye_ry * 0.4, f.eye_ry * 0.4);
          skin = mix(skin, {0.03, 0.03, 0.03}, pupil * white);
          const double by = f.eye_y - f.brow_gap + side * f.brow_tilt * (x - ex);
          skin = mix(skin, f.brow, ellipse(x, y, ex, by, f.eye_rx * 1.2, f.brow_thick));
          if (f.glasses) {
            const double ring = ellipse(x, y, ex, f.eye_y, f.eye_rx + 5, f.eye_rx + 2) -
                                ellipse(x, y, ex, f.eye_y, f.eye_rx + 3.5, f.eye_rx + 0.5);
            skin = mix(skin, {0.1, 0.1, 0.12}, std::clamp(ring, 0.0, 1.0));
          }
        }
        if (f.glasses) {
          const double bridge = ellipse(x, y, 0, f.eye_y - 2, f.eye_dx - f.eye_rx - 4, 1.0);
          skin = mix(skin, {0.1, 0.1, 0.12}, bridge);
        }
        // Fringe over the forehead.
        const double fringe_y = -f.face_ry * (1.0 - f.fringe) + 6 * std::sin(x / 9.0);
        const double fringe = std::clamp(fringe_y - y + 0.5, 0.0, 1.0);
        skin = mix(skin, f.hair, fringe);
        c = mix(c, skin, face);
      }
      for (int ch = 0; ch < 3; ++ch) img.at(py, px, ch) = to_byte(c[ch]);
    }
  }
  if (face_box) {
    const double rx = f.face_rx * v.scale, ry = f.face_ry * v.scale;
    // Bounding box of the tilted ellipse.
    const double bx = std::sqrt(rx * rx * ct * ct + ry * ry * st * st);
    const double by = std::sqrt(rx * rx * st * st + ry * ry * ct * ct);
    face_box->top = std::clamp(static_cast<int>(std::floor(cy - by)), 0, h - 1);
    face_box->bottom = std::clamp(static_cast<int>(std::ceil(cy + by)), face_box->top + 1, h);
    face_box->left = std::clamp(static_cast<int>(std::floor(cx - bx)), 0, w - 1);
    face_box->right = std::clamp(static_cast<int>(std::ceil(cx + bx)), face_box->left + 1, w);
  }
  return img;
}

/// Maps a box from the raw frame into the 128 x 128 HR frame produced by
/// `prepare_hr` under `crop`.
inline BBox to_hr_frame(const BBox& raw, CropPolicy crop, int h, int w) {
  const auto side = crop_side(crop, h, w);
  if (!side) throw UndersizedImage("to_hr_frame: image too small for crop policy");
  const int top = (h - *side) / 2, left = (w - *side) / 2;
  const double s = static_cast<double>(kHrSize) / *side;
  BBox b;
  b.top = std::clamp(static_cast<int>(std::floor((raw.top - top) * s)), 0, kHrSize - 1);
  b.left = std::clamp(static_cast<int>(std::floor((raw.left - left) * s)), 0, kHrSize - 1);
  b.bottom = std::clamp(static_cast<int>(std::ceil((raw.bottom - top) * s)), b.top + 1, kHrSize);
  b.right = std::clamp(static_cast<int>(std::ceil((raw.right - left) * s)), b.left + 1, kHrSize);
  return b;
}

struct SynthDataset {
  std::vector<ImageU8> images;
  std::vector<int> identity;
  std::vector<BBox> bbox;  ///< raw frame
  std::vector<std::string> names;
};

/// `identities` x `per_identity` faces named id<ii>_<vv>.
inline SynthDataset synth_faces(std::uint64_t seed, int identities, int per_identity) {
  if (identities < 1 || per_identity < 1) throw ValueError("synth_faces: counts must be positive");
  SynthDataset d;
  char name[32];
  for (int i = 0; i < identities; ++i)
    for (int j = 0; j < per_identity; ++j) {
      BBox b;
      d.images.push_back(synth_face(seed, i, j, &b));
      d.identity.push_back(i);
      d.bbox.push_back(b);
      std::snprintf(name, sizeof name, "id%03d_%02d", i, j);
      d.names.emplace_back(name);
    }
  return d;
}

/// Writes images/<name>.png, manifest.tsv (raw-frame boxes) and
/// bboxes.tsv (HR-frame boxes under the CelebA crop).
inline void write_synth_dataset(const std::filesystem::path& dir, const SynthDataset& d) {
  std::filesystem::create_directories(dir / "images");
  Manifest m;
  std::string sidecar;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    write_image(dir / "images" / (d.names[i] + ".png"), d.images[i]);
    m.records.push_back({std::filesystem::path("images") / (d.names[i] + ".png"),
                         "id" + std::to_string(d.identity[i]), d.bbox[i]});
    const BBox hb = to_hr_frame(d.bbox[i], CropPolicy::celeba_178, d.images[i].height, d.images[i].width);
    sidecar += d.names[i] + "\t" + std::to_string(hb.top) + "," + std::to_string(hb.right) + "," +
               std::to_string(hb.bottom) + "," + std::to_string(hb.left) + "\n";
  }
  const std::string text = format_manifest(m);
  write_bytes(dir / "manifest.tsv", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_bytes(dir / "bboxes.tsv", std::span(reinterpret_cast<const std::uint8_t*>(sidecar.data()), sidecar.size()));
}

}  // namespace eipnet
