#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsem/datagen.hpp"
#include "fedsem/tensor.hpp"

namespace fedsem {

// Evaluation protocol: IoU/MSE/SSIM for segmentation quality, MSE/SSIM/PSNR
// for reconstruction fidelity. Reconstruction SSIM is computed after an
// unsupervised re-segmentation of the reconstructed image so residual noise
// does not mask structural agreement; the report records that preprocessing.

struct MetricsReport {
  enum class Context { segmentation_eval, reconstruction_eval };
  enum class Preprocessing { none, unsupervised_resegmentation };

  Context context = Context::segmentation_eval;
  Preprocessing preprocessing = Preprocessing::none;
  std::optional<double> iou;  // segmentation contexts only
  double mse = 0.0;           // on [0,1]-normalized pixels
  double psnr_db = 0.0;       // +inf sentinel iff mse == 0
  double ssim = 0.0;
  bool resegmentation_degenerate = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["context"] = context == Context::segmentation_eval ? "segmentation_eval" : "reconstruction_eval";
    j["preprocessing"] =
        preprocessing == Preprocessing::none ? "none" : "unsupervised_resegmentation";
    if (iou) j["iou"] = *iou;
    j["mse"] = mse;
    j["psnr_db"] = std::isinf(psnr_db) ? nlohmann::json() : nlohmann::json(psnr_db);
    j["ssim"] = ssim;
    if (resegmentation_degenerate) j["resegmentation_degenerate"] = true;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

inline LayoutMask binarize(const Tensor& prob, double threshold = 0.5) {
  LayoutMask m;
  m.height = prob.dim(0);
  m.width = prob.dim(1);
  m.pixels.resize(static_cast<size_t>(prob.numel()));
  for (int64_t i = 0; i < prob.numel(); ++i)
    m.pixels[static_cast<size_t>(i)] = prob[i] > threshold ? 1 : 0;
  return m;
}

// Jaccard index; 1.0 when both masks are empty.
inline double iou(const LayoutMask& pred, const LayoutMask& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw std::invalid_argument("iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool a = pred.pixels[i] != 0, b = truth.pixels[i] != 0;
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Probability maps are thresholded at 0.5 before the Jaccard count.
inline double iou(const Tensor& prob, const LayoutMask& truth, double threshold = 0.5) {
  return iou(binarize(prob, threshold), truth);
}

inline double mse_norm(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "mse_norm");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

// Peak signal-to-noise ratio with MAX = 1 (inputs are [0,1]-normalized).
inline double psnr_from_mse(double mse) {
  if (mse < 0.0) throw std::invalid_argument("psnr_from_mse: negative mse");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------------------
// Gaussian filtering (separable, symmetric boundary)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return std::clamp<int64_t>(i, 0, n - 1);
}

inline Tensor gaussian_filter(const Tensor& img, double sigma, int radius) {
  const int64_t H = img.dim(0), W = img.dim(1);
  const auto k = gaussian_kernel(sigma, radius);
  Tensor tmp({H, W}), out({H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<size_t>(i + radius)] * img.at2(y, reflect_index(x + i, W));
      tmp.at2(y, x) = acc;
    }
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<size_t>(i + radius)] * tmp.at2(reflect_index(y + i, H), x);
      out.at2(y, x) = acc;
    }
  return out;
}

}  // namespace detail

inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  return detail::gaussian_filter(img, sigma, radius);
}

// ---------------------------------------------------------------------------
// SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1)
// ---------------------------------------------------------------------------

inline double ssim(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "ssim");
  const int64_t H = a.dim(0), W = a.dim(1);
  constexpr int kRadius = 5;  // 11x11 window
  if (H < 2 * kRadius + 1 || W < 2 * kRadius + 1)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  const double sigma = 1.5;

  Tensor aa(a.shape()), bb(a.shape()), ab(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Tensor mu_a = detail::gaussian_filter(a, sigma, kRadius);
  const Tensor mu_b = detail::gaussian_filter(b, sigma, kRadius);
  const Tensor m_aa = detail::gaussian_filter(aa, sigma, kRadius);
  const Tensor m_bb = detail::gaussian_filter(bb, sigma, kRadius);
  const Tensor m_ab = detail::gaussian_filter(ab, sigma, kRadius);

  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cab = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cab + kC2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
    acc += num / den;
  }
  return acc / static_cast<double>(a.numel());
}

// ---------------------------------------------------------------------------
// Unsupervised re-segmentation (smoothing + Otsu threshold)
// ---------------------------------------------------------------------------

struct ResegmentResult {
  LayoutMask mask;
  bool degenerate = false;  // constant input: no threshold separates classes
};

inline ResegmentResult unsupervised_resegment(const Tensor& image01) {
  if (image01.ndim() != 2) throw std::invalid_argument("unsupervised_resegment: expects [H,W]");
  const Tensor smooth = gaussian_blur(image01, 1.0);

  constexpr int kBins = 256;
  std::array<int64_t, kBins> hist{};
  for (int64_t i = 0; i < smooth.numel(); ++i) {
    int b = static_cast<int>(std::clamp(smooth[i], 0.0, 1.0) * (kBins - 1) + 0.5);
    ++hist[static_cast<size_t>(b)];
  }
  const int64_t total = smooth.numel();
  double sum_all_bins = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all_bins += static_cast<double>(b) * hist[static_cast<size_t>(b)];

  double best_sigma = -1.0;
  int best_t = -1;
  int64_t w0 = 0;
  double sum0 = 0.0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[static_cast<size_t>(t)];
    sum0 += static_cast<double>(t) * hist[static_cast<size_t>(t)];
    const int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all_bins - sum0) / w1;
    const double sigma_b = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (sigma_b > best_sigma) {
      best_sigma = sigma_b;
      best_t = t;
    }
  }

  ResegmentResult out;
  out.mask.height = smooth.dim(0);
  out.mask.width = smooth.dim(1);
  out.mask.pixels.assign(static_cast<size_t>(smooth.numel()), 0);
  if (best_t < 0) {
    out.degenerate = true;  // single-bin histogram
    return out;
  }
  const double threshold = (best_t + 0.5) / (kBins - 1);
  for (int64_t i = 0; i < smooth.numel(); ++i)
    out.mask.pixels[static_cast<size_t>(i)] = smooth[i] > threshold ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

inline MetricsReport evaluate_segmentation(const Tensor& prob_map, const LayoutMask& truth) {
  MetricsReport r;
  r.context = MetricsReport::Context::segmentation_eval;
  r.preprocessing = MetricsReport::Preprocessing::none;
  const Tensor truth01 = truth.to_unit_tensor();
  r.iou = iou(prob_map, truth);
  r.mse = mse_norm(prob_map, truth01);
  r.psnr_db = psnr_from_mse(r.mse);
  r.ssim = ssim(prob_map, truth01);
  return r;
}

inline MetricsReport evaluate_reconstruction(const Tensor& recon, const SemSample& original) {
  recon.require_same_shape(original.image, "evaluate_reconstruction");
  MetricsReport r;
  r.context = MetricsReport::Context::reconstruction_eval;
  r.preprocessing = MetricsReport::Preprocessing::unsupervised_resegmentation;
  r.mse = mse_norm(recon, original.image);
  r.psnr_db = psnr_from_mse(r.mse);
  const ResegmentResult reseg = unsupervised_resegment(recon);
  r.resegmentation_degenerate = reseg.degenerate;
  r.ssim = ssim(reseg.mask.to_unit_tensor(), original.mask.to_unit_tensor());
  return r;
}

}  // namespace fedsem
