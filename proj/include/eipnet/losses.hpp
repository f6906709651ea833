#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "eipnet/autodiff.hpp"
#include "eipnet/canny.hpp"
#include "eipnet/image.hpp"

namespace eipnet {

struct LossWeights {
  double gamma = 1.0;  ///< edge
  double alpha = 0.1;  ///< identity
  double beta = 1e-3;  ///< adversarial

  void validate() const {
    for (double w : {gamma, alpha, beta})
      if (!std::isfinite(w) || w < 0) throw ValueError("loss weights must be finite and >= 0");
  }
};

/// Scalar values of one training step. Terms that were not computed are 0.
struct LossReport {
  double l_rgb = 0;
  double l_e = 0;
  double l_lc = 0;
  double l_id = 0;
  double l_ad_g = 0;
  double l_ad_d = 0;
  double total = 0;

  static constexpr const char* csv_header = "l_rgb,l_e,l_lc,l_id,l_ad_g,l_ad_d,total";
  std::array<double, 7> fields() const { return {l_rgb, l_e, l_lc, l_id, l_ad_g, l_ad_d, total}; }
};

/// Channel-summed MSE: sum over RGB of the per-channel mean squared error,
/// averaged over the batch.
template <class T>
Var l_rgb(Tape<T>& t, Var sr, Var hr) {
  const Shape s = t.shape(sr);
  if (s != t.shape(hr)) throw ShapeError("l_rgb: " + s.str() + " vs " + t.shape(hr).str());
  return sum_squared_diff(t, sr, hr, static_cast<T>(s.n) * s.h * s.w);
}

/// The same error measured after converting both images to YUV.
template <class T>
Var l_lc(Tape<T>& t, Var sr, Var hr) {
  if (t.shape(sr) != t.shape(hr)) throw ShapeError("l_lc: " + t.shape(sr).str() + " vs " + t.shape(hr).str());
  return l_rgb(t, channel_mix(t, sr, kRgbToYuv), channel_mix(t, hr, kRgbToYuv));
}

/// Largest squared singular value of the YUV matrix: l_lc <= this * l_rgb.
inline double lc_rgb_bound() {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = kRgbToYuv[r][c];
  const double s = Eigen::JacobiSVD<Eigen::Matrix3d>(m).singularValues()(0);
  return s * s;
}

/// Sum over scales of the per-pixel squared error between edge logits and
/// binary targets. Invalid logits (disabled blocks) are skipped.
template <class T>
Var l_e(Tape<T>& t, const std::array<Var, 3>& logits, const std::array<Tensor<T>, 3>& targets) {
  Var acc;
  for (int i = 0; i < 3; ++i) {
    if (!logits[i].valid()) continue;
    const Shape s = t.shape(logits[i]);
    if (s != targets[i].shape()) {
      throw ShapeError("l_e: logits " + s.str() + " vs target " + targets[i].shape().str() + " at scale " +
                       std::to_string(2 << i));
    }
    const Var term = sum_squared_diff(t, logits[i], t.constant(targets[i]), static_cast<T>(s.n) * s.h * s.w);
    acc = acc.valid() ? add(t, acc, term) : term;
  }
  return acc.valid() ? acc : t.constant(Tensor<T>({1, 1, 1, 1}));
}

/// JS divergence between the softmax of two batches of embedding logits.
template <class T>
Var l_id(Tape<T>& t, Var sr_logits, Var hr_logits) {
  return js_divergence(t, softmax(t, sr_logits), softmax(t, hr_logits));
}

template <class T>
Var l_ad_d(Tape<T>& t, Var d_real, Var d_fake) {
  return add(t, neg_log(t, d_real), neg_log(t, one_minus(t, d_fake)));
}

/// Non-saturating generator term.
template <class T>
Var l_ad_g(Tape<T>& t, Var d_fake) {
  return neg_log(t, d_fake);
}

/// Generator loss terms on the tape; invalid handles count as zero.
struct LossTerms {
  Var l_rgb, l_e, l_lc, l_id, l_ad_g;
};

/// l_rgb + gamma l_e + l_lc + alpha l_id + beta l_ad_g, with beta forced to 0
/// outside the adversarial phase. Fills `report` (except l_ad_d).
template <class T>
Var total_loss(Tape<T>& t, const LossTerms& terms, const LossWeights& w, bool adversarial, LossReport& report) {
  w.validate();
  if (!terms.l_rgb.valid()) throw ValueError("total_loss: l_rgb is required");
  Var acc = terms.l_rgb;
  report.l_rgb = static_cast<double>(t.item(terms.l_rgb));
  auto term = [&](Var v, double weight, double& field) {
    if (!v.valid()) return;
    field = static_cast<double>(t.item(v));
    if (weight == 0) return;
    acc = add(t, acc, weight == 1 ? v : scale(t, v, static_cast<T>(weight)));
  };
  term(terms.l_e, w.gamma, report.l_e);
  term(terms.l_lc, 1.0, report.l_lc);
  term(terms.l_id, w.alpha, report.l_id);
  term(terms.l_ad_g, adversarial ? w.beta : 0.0, report.l_ad_g);
  report.total = static_cast<double>(t.item(acc));
  return acc;
}

/// Binary Canny maps of a batch of HR images resized to each edge-block
/// scale (2x, 4x, 8x of `lr_size`), shaped (n, 1, s, s).
template <class T>
std::array<Tensor<T>, 3> edge_targets(const Tensor<T>& hr, int lr_size, const ThresholdPolicy& policy) {
  const Shape s = hr.shape();
  std::array<Tensor<T>, 3> out;
  for (int i = 0; i < 3; ++i) {
    const int size = lr_size << (i + 1);
    out[i] = Tensor<T>({s.n, 1, size, size});
    for (int n = 0; n < s.n; ++n) {
      const ImageF img = from_tensor(hr, n);
      const ImageF scaled = (img.height == size && img.width == size) ? img : resize(img, size, size);
      const EdgeMap e = canny(scaled, policy);
      T* dst = out[i].item(n);
      for (std::size_t p = 0; p < e.values.size(); ++p) dst[p] = e.values[p] ? T(1) : T(0);
    }
  }
  return out;
}

}  // namespace eipnet
