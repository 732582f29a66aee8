#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "fedsem/model.hpp"

using namespace fedsem;

namespace {

SemSample make_sample(int64_t h, int64_t w, uint64_t seed, double density = 0.4) {
  LayoutMask m = generate_layout(std::max<int64_t>(8, h), std::max<int64_t>(8, w), density, seed);
  NoiseConfig cfg;
  cfg.seed = mix_seed(seed, "render");
  SemSample s = render_sem(m, cfg);
  if (h < 8 || w < 8) {
    // tiny samples for the dense toy model: crop instead of resize
    SemSample tiny;
    tiny.id = s.id;
    tiny.image = Tensor({h, w});
    tiny.mask.height = h;
    tiny.mask.width = w;
    tiny.mask.pixels.resize(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        tiny.image.at2(y, x) = s.image.at2(y, x);
        tiny.mask.at(y, x) = s.mask.at(y, x);
      }
    return tiny;
  }
  return s;
}

}  // namespace

TEST_CASE("model tags round-trip") {
  ModelSpec u;
  u.arch = Architecture::unet;
  u.depth = 2;
  u.base_channels = 8;
  u.height = u.width = 64;
  const ModelSpec u2 = ModelSpec::from_tag(u.tag());
  REQUIRE(u2.arch == Architecture::unet);
  REQUIRE(u2.depth == 2);
  REQUIRE(u2.base_channels == 8);
  REQUIRE(u2.height == 64);

  ModelSpec t;
  t.arch = Architecture::toy_linear;
  t.height = t.width = 4;
  REQUIRE(ModelSpec::from_tag(t.tag()).arch == Architecture::toy_linear);
  REQUIRE_THROWS_AS(ModelSpec::from_tag("resnet:50"), std::invalid_argument);
}

TEST_CASE("toy model has one dense layer of the expected size") {
  ModelSpec spec;
  spec.arch = Architecture::toy_linear;
  spec.height = spec.width = 4;
  const ModelWeights w = build_model(spec, 1);
  REQUIRE(w.entries.size() == 2);
  REQUIRE(w.parameter_count() == 16 * 16 + 16);
}

TEST_CASE("initialization is deterministic per seed") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.height = spec.width = 16;
  const ModelWeights a = build_model(spec, 7);
  const ModelWeights b = build_model(spec, 7);
  const ModelWeights c = build_model(spec, 8);
  for (size_t i = 0; i < a.entries.size(); ++i)
    REQUIRE(a.entries[i].second.vec() == b.entries[i].second.vec());
  REQUIRE(a.entries[0].second.vec() != c.entries[0].second.vec());
}

TEST_CASE("unet rejects dims not divisible by 2^depth") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 4;
  spec.height = spec.width = 24;  // 24 % 16 != 0
  REQUIRE_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("forward produces an in-range probability map of the input shape") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 4;
  spec.base_channels = 16;
  spec.height = spec.width = 256;
  const ModelWeights w = build_model(spec, 3);
  const SemSample s = make_sample(256, 256, 5);
  const Tensor out = forward(w, s.image);
  REQUIRE(out.shape() == std::vector<int64_t>{256, 256});
  for (int64_t i = 0; i < out.numel(); ++i) {
    REQUIRE(out[i] >= 0.0);
    REQUIRE(out[i] <= 1.0);
  }
}

TEST_CASE("toy model with zero weights yields a constant half map") {
  ModelSpec spec;
  spec.arch = Architecture::toy_linear;
  spec.height = spec.width = 4;
  ModelWeights w = build_model(spec, 1);
  for (auto& [name, t] : w.entries) t = Tensor::zeros(t.shape());
  const Tensor out = forward(w, Tensor::full({4, 4}, 0.3));
  for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == Catch::Approx(0.5));
}

TEST_CASE("perturbing one input pixel changes the output") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.height = spec.width = 16;
  const ModelWeights w = build_model(spec, 9);
  const SemSample s = make_sample(16, 16, 2);
  const Tensor base = forward(w, s.image);
  Tensor bumped = s.image;
  bumped.at2(7, 7) = std::clamp(bumped.at2(7, 7) + 1e-3, 0.0, 1.0);
  const Tensor out = forward(w, bumped);
  double delta = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i) delta += std::fabs(out[i] - base[i]);
  REQUIRE(delta > 1e-9);
}

TEST_CASE("segmentation loss values") {
  const LayoutMask m = generate_layout(16, 16, 0.4, 3);
  const Tensor mask01 = m.to_unit_tensor();

  REQUIRE(segmentation_loss(mask01, m) < 1e-6);            // exact prediction
  REQUIRE(segmentation_loss(Tensor::full({16, 16}, 0.5), m) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));    // ln 2 per pixel

  Rng rng(4);
  Tensor random_pred({16, 16});
  for (int64_t i = 0; i < random_pred.numel(); ++i) random_pred[i] = rng.uniform();
  REQUIRE(segmentation_loss(random_pred, m) > segmentation_loss(mask01, m));

  REQUIRE_THROWS_AS(segmentation_loss(Tensor::zeros({8, 8}), m), std::invalid_argument);
}

TEST_CASE("captured gradients match finite differences") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 2;
  spec.height = spec.width = 16;
  ModelWeights w = build_model(spec, 11);
  const std::vector<SemSample> batch = {make_sample(16, 16, 21), make_sample(16, 16, 22)};

  const GradientEstimate g = compute_gradients(w, batch);
  REQUIRE(g.provenance == GradientEstimate::Provenance::captured);

  auto loss_at = [&](const ModelWeights& wt) {
    double acc = 0.0;
    for (const auto& s : batch) acc += segmentation_loss(forward(wt, s.image), s.mask);
    return acc / static_cast<double>(batch.size());
  };

  // probe 20 parameters spread across all tensors
  Rng rng(31);
  const double h = 1e-5;
  for (int probe = 0; probe < 20; ++probe) {
    const size_t e = static_cast<size_t>(rng.uniform_int(w.entries.size()));
    const int64_t i = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(w.entries[e].second.numel())));
    ModelWeights wp = w;
    wp.entries[e].second[i] += h;
    const double fp = loss_at(wp);
    wp.entries[e].second[i] -= 2 * h;
    const double fm = loss_at(wp);
    const double fd = (fp - fm) / (2 * h);
    const double an = g.entries[e].second[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
    REQUIRE(std::fabs(fd - an) / denom < 1e-3);
  }
}

TEST_CASE("a duplicated sample leaves the mean gradient unchanged") {
  ModelSpec spec;
  spec.arch = Architecture::toy_linear;
  spec.height = spec.width = 4;
  const ModelWeights w = build_model(spec, 13);
  const SemSample s = make_sample(4, 4, 33);
  const GradientEstimate g1 = compute_gradients(w, {s});
  const GradientEstimate g2 = compute_gradients(w, {s, s});
  for (size_t e = 0; e < g1.entries.size(); ++e)
    for (int64_t i = 0; i < g1.entries[e].second.numel(); ++i)
      REQUIRE(g1.entries[e].second[i] == Catch::Approx(g2.entries[e].second[i]).margin(1e-12));
}

TEST_CASE("saturated correct predictions give near-zero gradients") {
  ModelSpec spec;
  spec.arch = Architecture::toy_linear;
  spec.height = spec.width = 4;
  const SemSample s = make_sample(4, 4, 44);
  ModelWeights w = build_model(spec, 1);
  w.entries[0].second = Tensor::zeros(w.entries[0].second.shape());  // fc.w
  Tensor& bias = w.entries[1].second;
  for (int64_t i = 0; i < 16; ++i) bias[i] = s.mask.pixels[static_cast<size_t>(i)] ? 25.0 : -25.0;

  const GradientEstimate g = compute_gradients(w, {s});
  for (const auto& [name, t] : g.entries) REQUIRE(t.max_abs() < 1e-9);
}

TEST_CASE("compute_gradients rejects an empty batch") {
  ModelSpec spec;
  spec.arch = Architecture::toy_linear;
  spec.height = spec.width = 4;
  REQUIRE_THROWS_AS(compute_gradients(build_model(spec, 1), {}), std::invalid_argument);
}

TEST_CASE("weight arithmetic closes under add/sub/scale") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 2;
  spec.height = spec.width = 16;
  const ModelWeights a = build_model(spec, 1);
  const ModelWeights b = build_model(spec, 2);

  const ModelWeights round_trip = weights_add(weights_sub(a, b), b);
  for (size_t e = 0; e < a.entries.size(); ++e)
    for (int64_t i = 0; i < a.entries[e].second.numel(); ++i)
      REQUIRE(round_trip.entries[e].second[i] ==
              Catch::Approx(a.entries[e].second[i]).margin(1e-12));

  const ModelWeights twice = weights_scale(a, 2.0);
  REQUIRE(twice.entries[0].second[0] == Catch::Approx(2.0 * a.entries[0].second[0]));

  ModelWeights mismatched = b;
  mismatched.model_tag = "toy:4x4";
  REQUIRE_THROWS_AS(weights_add(a, mismatched), std::invalid_argument);
}

TEST_CASE("snapshot wire format round-trips float32 payloads bit-exactly") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.height = spec.width = 16;
  ModelWeights w = build_model(spec, 17);
  w.version = 42;

  const auto bytes = serialize_weights(w);
  const ModelWeights back = deserialize_weights(bytes);
  REQUIRE(back.model_tag == w.model_tag);
  REQUIRE(back.version == 42);
  REQUIRE(serialize_weights(back) == bytes);  // stable after one quantization
  for (size_t e = 0; e < w.entries.size(); ++e) {
    REQUIRE(back.entries[e].first == w.entries[e].first);
    for (int64_t i = 0; i < w.entries[e].second.numel(); ++i)
      REQUIRE(back.entries[e].second[i] ==
              static_cast<double>(static_cast<float>(w.entries[e].second[i])));
  }

  const auto dir = std::filesystem::temp_directory_path() / "fedsem_weights_test.fsw";
  write_weights(dir.string(), w);
  const ModelWeights from_file = read_weights(dir.string());
  REQUIRE(weights_digest(from_file) == weights_digest(back));
  std::filesystem::remove(dir);

  REQUIRE_THROWS_AS(read_weights("/nonexistent/path.fsw"), MissingInputError);
  std::vector<uint8_t> corrupt = bytes;
  corrupt[0] = 'X';
  REQUIRE_THROWS(deserialize_weights(corrupt));
}
