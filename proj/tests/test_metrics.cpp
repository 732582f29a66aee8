#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedsem/datagen.hpp"
#include "fedsem/metrics.hpp"
#include "fedsem/random.hpp"

using namespace fedsem;

namespace {

LayoutMask mask_from(std::initializer_list<int> bits, int64_t h, int64_t w) {
  LayoutMask m;
  m.height = h;
  m.width = w;
  for (int b : bits) m.pixels.push_back(static_cast<uint8_t>(b));
  return m;
}

Tensor random_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("iou identities and hand-counted case") {
  const LayoutMask truth = mask_from({0, 0, 0, 0,
                                      0, 1, 1, 0,
                                      0, 1, 1, 0,
                                      0, 0, 0, 0}, 4, 4);
  REQUIRE(iou(truth, truth) == 1.0);

  // pred covers 2 of the 4 truth pixels, no false positives -> 2/4
  const LayoutMask pred = mask_from({0, 0, 0, 0,
                                     0, 1, 1, 0,
                                     0, 0, 0, 0,
                                     0, 0, 0, 0}, 4, 4);
  REQUIRE(iou(pred, truth) == Catch::Approx(0.5));

  const LayoutMask other = mask_from({1, 0, 0, 0,
                                      0, 0, 0, 0,
                                      0, 0, 0, 0,
                                      0, 0, 0, 1}, 4, 4);
  const LayoutMask disjoint = mask_from({0, 1, 0, 0,
                                         0, 0, 0, 0,
                                         0, 0, 0, 0,
                                         0, 0, 1, 0}, 4, 4);
  REQUIRE(iou(other, disjoint) == 0.0);

  const LayoutMask empty = mask_from({0, 0, 0, 0,
                                      0, 0, 0, 0,
                                      0, 0, 0, 0,
                                      0, 0, 0, 0}, 4, 4);
  REQUIRE(iou(empty, empty) == 1.0);
}

TEST_CASE("iou on probability maps equals iou on the 0.5-thresholded mask") {
  Rng rng(7);
  Tensor prob({16, 16});
  for (int64_t i = 0; i < prob.numel(); ++i) prob[i] = rng.uniform();
  const LayoutMask truth = generate_layout(16, 16, 0.4, 5);
  REQUIRE(iou(prob, truth) == iou(binarize(prob, 0.5), truth));
}

TEST_CASE("mse basics") {
  const Tensor a = Tensor::zeros({8, 8});
  const Tensor b = Tensor::full({8, 8}, 1.0);
  const Tensor c = Tensor::full({8, 8}, 0.5);
  REQUIRE(mse_norm(a, a) == 0.0);
  REQUIRE(mse_norm(a, b) == Catch::Approx(1.0));
  REQUIRE(mse_norm(a, c) == Catch::Approx(0.25));
  REQUIRE(mse_norm(a, b) == mse_norm(b, a));
}

TEST_CASE("single flipped pixel mse") {
  Tensor a = Tensor::zeros({64, 64});
  Tensor b = a;
  b[100] = 1.0;
  REQUIRE(mse_norm(a, b) == Catch::Approx(1.0 / (64.0 * 64.0)));
}

TEST_CASE("psnr values and sentinel") {
  REQUIRE(std::isinf(psnr_from_mse(0.0)));
  REQUIRE(psnr_from_mse(1.0) == Catch::Approx(0.0));
  REQUIRE(psnr_from_mse(0.01) == Catch::Approx(20.0));
  REQUIRE_THROWS_AS(psnr_from_mse(-1e-9), std::invalid_argument);
}

TEST_CASE("ssim identity, symmetry and range") {
  const Tensor a = random_image(32, 32, 1);
  const Tensor b = random_image(32, 32, 2);
  REQUIRE(ssim(a, a) == Catch::Approx(1.0));
  REQUIRE(ssim(a, b) == Catch::Approx(ssim(b, a)));
  for (uint64_t s = 3; s < 8; ++s) {
    const double v = ssim(random_image(16, 16, s), random_image(16, 16, s + 100));
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
  }
  REQUIRE_THROWS_AS(ssim(random_image(8, 8, 1), random_image(8, 8, 2)), std::invalid_argument);
}

TEST_CASE("ssim of a mask against its inversion is strongly negative") {
  const LayoutMask m = generate_layout(64, 64, 0.4, 11);
  const Tensor a = m.to_unit_tensor();
  Tensor inv = a;
  for (int64_t i = 0; i < inv.numel(); ++i) inv[i] = 1.0 - inv[i];
  REQUIRE(ssim(a, inv) < -0.1);
}

TEST_CASE("ssim separates same-layout renders from different layouts") {
  const LayoutMask m1 = generate_layout(64, 64, 0.4, 21);
  const LayoutMask m2 = generate_layout(64, 64, 0.4, 22);
  NoiseConfig cfg;
  cfg.seed = 1;
  const SemSample r1a = render_sem(m1, cfg);
  cfg.seed = 2;
  const SemSample r1b = render_sem(m1, cfg);
  cfg.seed = 3;
  const SemSample r2 = render_sem(m2, cfg);

  const double same_layout = ssim(r1a.image, r1b.image);
  const double diff_layout = ssim(r1a.image, r2.image);
  REQUIRE(same_layout > diff_layout + 0.1);
}

TEST_CASE("psnr decreases as additive noise grows") {
  const LayoutMask m = generate_layout(32, 32, 0.4, 4);
  const Tensor base = m.to_unit_tensor();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.02, 0.05, 0.1, 0.2}) {
      Rng rng(seed * 1000 + static_cast<uint64_t>(amp * 1000));
      Tensor noisy = base;
      for (int64_t i = 0; i < noisy.numel(); ++i)
        noisy[i] = std::clamp(noisy[i] + amp * rng.normal(), 0.0, 1.0);
      const double p = psnr_from_mse(mse_norm(base, noisy));
      REQUIRE(p <= prev);
      prev = p;
    }
  }
}

TEST_CASE("resegmentation recovers clean two-level images") {
  const LayoutMask m = generate_layout(64, 64, 0.4, 31);
  NoiseConfig cfg;
  cfg.std_dev = 1.0;  // nearly noiseless
  cfg.shot_noise = 0.0;
  cfg.seed = 5;
  const SemSample s = render_sem(m, cfg);
  const ResegmentResult r = unsupervised_resegment(s.image);
  REQUIRE_FALSE(r.degenerate);
  REQUIRE(iou(r.mask, m) > 0.95);
}

TEST_CASE("resegmentation stays robust at the default noise level") {
  const LayoutMask m = generate_layout(64, 64, 0.4, 41);
  NoiseConfig cfg;  // std 20, shot 20, dwell 10
  cfg.seed = 6;
  const SemSample s = render_sem(m, cfg);
  const ResegmentResult r = unsupervised_resegment(s.image);
  REQUIRE_FALSE(r.degenerate);
  REQUIRE(iou(r.mask, m) > 0.8);
}

TEST_CASE("resegmentation flags constant images") {
  const ResegmentResult r = unsupervised_resegment(Tensor::full({32, 32}, 0.5));
  REQUIRE(r.degenerate);
  REQUIRE(r.mask.foreground_count() == 0);
}

TEST_CASE("reconstruction report: perfect and noise baselines") {
  const LayoutMask m = generate_layout(64, 64, 0.4, 51);
  NoiseConfig cfg;
  cfg.seed = 7;
  SemSample s = render_sem(m, cfg);
  s.id = "t";

  const MetricsReport perfect = evaluate_reconstruction(s.image, s);
  REQUIRE(perfect.mse == 0.0);
  REQUIRE(std::isinf(perfect.psnr_db));
  REQUIRE(perfect.preprocessing == MetricsReport::Preprocessing::unsupervised_resegmentation);
  // resegmenting the clean render recovers the layout, so SSIM is high
  REQUIRE(perfect.ssim > 0.5);

  const MetricsReport noise = evaluate_reconstruction(random_image(64, 64, 99), s);
  REQUIRE(noise.ssim < 0.15);
  REQUIRE(noise.psnr_db < 11.0);
  REQUIRE(noise.ssim + 0.3 < perfect.ssim);
}

TEST_CASE("segmentation report carries iou") {
  const LayoutMask m = generate_layout(32, 32, 0.4, 61);
  const MetricsReport r = evaluate_segmentation(m.to_unit_tensor(), m);
  REQUIRE(r.iou.has_value());
  REQUIRE(*r.iou == 1.0);
  REQUIRE(r.mse == 0.0);
  REQUIRE(r.ssim == Catch::Approx(1.0));
}
