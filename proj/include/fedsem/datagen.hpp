#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsem/errors.hpp"
#include "fedsem/image_io.hpp"
#include "fedsem/random.hpp"
#include "fedsem/tensor.hpp"

namespace fedsem {

// Synthetic SEM imagery: Manhattan-geometry layout masks rendered under a
// two-level Gaussian noise model with a signal-dependent shot-noise term,
// partitioned into named client subsets.

struct LayoutMask {
  int64_t height = 0, width = 0;
  std::vector<uint8_t> pixels;  // 0 background, 1 foreground

  int64_t numel() const { return height * width; }
  uint8_t at(int64_t y, int64_t x) const { return pixels[static_cast<size_t>(y * width + x)]; }
  uint8_t& at(int64_t y, int64_t x) { return pixels[static_cast<size_t>(y * width + x)]; }

  int64_t foreground_count() const {
    int64_t n = 0;
    for (uint8_t p : pixels) n += p;
    return n;
  }
  double foreground_fraction() const {
    return static_cast<double>(foreground_count()) / static_cast<double>(numel());
  }
  bool both_classes_present() const {
    const int64_t fg = foreground_count();
    return fg > 0 && fg < numel();
  }
  // Mask as a [0,1] image, for metric comparisons against predictions.
  Tensor to_unit_tensor() const {
    Tensor t({height, width});
    for (int64_t i = 0; i < numel(); ++i) t[i] = pixels[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return t;
  }
  bool operator==(const LayoutMask& o) const = default;
};

struct NoiseConfig {
  double background_mean = 75.0;  // gray levels in [0,255]
  double foreground_mean = 135.0;
  double std_dev = 20.0;
  double shot_noise = 20.0;
  double dwell_time_us = 10.0;
  uint64_t seed = 0;

  void validate() const {
    if (!(background_mean >= 0.0 && background_mean < foreground_mean && foreground_mean <= 255.0))
      throw std::invalid_argument("NoiseConfig: need 0 <= background_mean < foreground_mean <= 255");
    if (!(std_dev > 0.0)) throw std::invalid_argument("NoiseConfig: std_dev must be positive");
    if (!(shot_noise >= 0.0)) throw std::invalid_argument("NoiseConfig: shot_noise must be >= 0");
    if (!(dwell_time_us > 0.0)) throw std::invalid_argument("NoiseConfig: dwell_time must be positive");
  }

  // Total per-class noise sigma in gray levels. The shot term is a
  // signal-dependent Gaussian with variance mean * shot_noise / dwell_time.
  double total_sigma(double class_mean) const {
    return std::sqrt(std_dev * std_dev + class_mean * shot_noise / dwell_time_us);
  }

  // Upper bound on |E[clamped pixel] - class mean| caused by clamping to
  // [0,255]: for X ~ N(mu, s^2), E[(c - X)^+] <= s * phi((mu - c)/s).
  double clamp_bias_bound(double class_mean) const {
    const double s = total_sigma(class_mean);
    auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); };
    return s * (phi(class_mean / s) + phi((255.0 - class_mean) / s));
  }
};

struct SemSample {
  std::string id;
  Tensor image;  // [H,W] in [0,1]
  LayoutMask mask;

  void validate() const {
    if (image.ndim() != 2 || image.dim(0) != mask.height || image.dim(1) != mask.width)
      throw std::invalid_argument("SemSample: image/mask dimension mismatch");
    for (int64_t i = 0; i < image.numel(); ++i)
      if (!(image[i] >= 0.0 && image[i] <= 1.0))
        throw std::invalid_argument("SemSample: image values must lie in [0,1]");
  }
};

struct ClientDataset {
  std::string subset_name;
  std::string owner;
  std::vector<SemSample> samples;
};

// ---------------------------------------------------------------------------
// Layout generation
// ---------------------------------------------------------------------------

// Axis-aligned tracks and contacts painted until the foreground fraction
// reaches `structure_density`; the result lands within +/-10% (relative).
inline LayoutMask generate_layout(int64_t height, int64_t width, double structure_density,
                                  uint64_t seed) {
  if (height < 8 || width < 8) throw std::invalid_argument("generate_layout: dimensions must be >= 8");
  if (!(structure_density > 0.0 && structure_density < 1.0))
    throw std::invalid_argument("generate_layout: density must lie in (0,1)");

  LayoutMask m;
  m.height = height;
  m.width = width;
  m.pixels.assign(static_cast<size_t>(height * width), 0);

  Rng rng(seed);
  const int64_t total = height * width;
  const int64_t target = static_cast<int64_t>(std::ceil(structure_density * total));
  // never paint the last background pixel; never exceed +5% relative
  const int64_t hard_cap =
      std::min<int64_t>(total - 1, static_cast<int64_t>(structure_density * 1.05 * total));
  const int64_t min_dim = std::min(height, width);
  int64_t painted = 0;

  auto paint = [&](int64_t y0, int64_t x0, int64_t h, int64_t w) {
    for (int64_t y = y0; y < std::min(height, y0 + h); ++y)
      for (int64_t x = x0; x < std::min(width, x0 + w); ++x) {
        uint8_t& p = m.at(y, x);
        if (!p) {
          p = 1;
          ++painted;
        }
      }
  };
  auto count_new = [&](int64_t y0, int64_t x0, int64_t h, int64_t w) {
    int64_t n = 0;
    for (int64_t y = y0; y < std::min(height, y0 + h); ++y)
      for (int64_t x = x0; x < std::min(width, x0 + w); ++x) n += (m.at(y, x) == 0);
    return n;
  };

  const int64_t max_attempts = 200000;
  for (int64_t attempt = 0; attempt < max_attempts && painted < target; ++attempt) {
    const int64_t budget = std::min(hard_cap, std::max<int64_t>(target, painted + 1)) - painted;
    int64_t h, w;
    if (budget < 4) {
      h = 1;
      w = 1;  // close the last few pixels
    } else if (budget <= std::max<int64_t>(8, min_dim / 4)) {
      h = 2;
      w = 2;
    } else if (rng.uniform() < 0.7) {
      // track: long bar, horizontal or vertical; features stay >= 2 px wide
      const int64_t thick = 2 + static_cast<int64_t>(rng.uniform_int(std::max<int64_t>(1, min_dim / 16)));
      const int64_t len =
          min_dim / 2 + static_cast<int64_t>(rng.uniform_int(std::max<int64_t>(1, min_dim / 2)));
      if (rng.uniform() < 0.5) {
        h = thick;
        w = len;
      } else {
        h = len;
        w = thick;
      }
    } else {
      // contact: small square
      const int64_t side = 2 + static_cast<int64_t>(rng.uniform_int(std::max<int64_t>(2, min_dim / 12)));
      h = side;
      w = side;
    }
    const int64_t y0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(height)));
    const int64_t x0 = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(width)));
    if (count_new(y0, x0, h, w) > budget) continue;
    paint(y0, x0, h, w);
  }
  if (painted < static_cast<int64_t>(0.9 * structure_density * total))
    throw std::runtime_error("generate_layout: failed to reach requested density");
  if (!m.both_classes_present())
    throw std::runtime_error("generate_layout: degenerate single-class mask");
  return m;
}

// ---------------------------------------------------------------------------
// SEM rendering
// ---------------------------------------------------------------------------

inline SemSample render_sem(const LayoutMask& mask, const NoiseConfig& cfg) {
  cfg.validate();
  if (!mask.both_classes_present())
    throw std::invalid_argument("render_sem: mask must contain both classes");
  SemSample s;
  s.mask = mask;
  s.image = Tensor({mask.height, mask.width});
  Rng rng(cfg.seed);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    const double base = mask.pixels[static_cast<size_t>(i)] ? cfg.foreground_mean : cfg.background_mean;
    const double shot_sigma = std::sqrt(std::max(0.0, base * cfg.shot_noise / cfg.dwell_time_us));
    const double n_class = rng.normal();
    const double n_shot = rng.normal();
    const double v = base + cfg.std_dev * n_class + shot_sigma * n_shot;
    s.image[i] = std::clamp(v, 0.0, 255.0) / 255.0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor resize_bilinear(const Tensor& src, int64_t H, int64_t W) {
  const int64_t h = src.dim(0), w = src.dim(1);
  Tensor out({H, W});
  const double sy = static_cast<double>(h) / static_cast<double>(H);
  const double sx = static_cast<double>(w) / static_cast<double>(W);
  for (int64_t y = 0; y < H; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < W; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1.0 - wx) * src.at2(y0, x0) + wx * src.at2(y0, x1);
      const double bot = (1.0 - wx) * src.at2(y1, x0) + wx * src.at2(y1, x1);
      out.at2(y, x) = (1.0 - wy) * top + wy * bot;
    }
  }
  return out;
}

inline LayoutMask resize_nearest(const LayoutMask& src, int64_t H, int64_t W) {
  LayoutMask out;
  out.height = H;
  out.width = W;
  out.pixels.resize(static_cast<size_t>(H * W));
  const double sy = static_cast<double>(src.height) / static_cast<double>(H);
  const double sx = static_cast<double>(src.width) / static_cast<double>(W);
  for (int64_t y = 0; y < H; ++y) {
    const int64_t yy = std::min<int64_t>(src.height - 1, static_cast<int64_t>((y + 0.5) * sy));
    for (int64_t x = 0; x < W; ++x) {
      const int64_t xx = std::min<int64_t>(src.width - 1, static_cast<int64_t>((x + 0.5) * sx));
      out.at(y, x) = src.at(yy, xx) ? 1 : 0;  // re-binarize
    }
  }
  return out;
}

}  // namespace detail

inline SemSample resize_sample(const SemSample& sample, int64_t height, int64_t width) {
  if (height < 8 || width < 8) throw std::invalid_argument("resize_sample: target dims must be >= 8");
  SemSample out;
  out.id = sample.id;
  out.image = detail::resize_bilinear(sample.image, height, width);
  for (int64_t i = 0; i < out.image.numel(); ++i) out.image[i] = std::clamp(out.image[i], 0.0, 1.0);
  out.mask = detail::resize_nearest(sample.mask, height, width);
  return out;
}

// ---------------------------------------------------------------------------
// Split manifests
// ---------------------------------------------------------------------------

enum class SubsetRole { train, holdout };

struct SubsetSpec {
  std::string name;
  int64_t count = 0;
  SubsetRole role = SubsetRole::train;
};

struct CombinedSpec {
  std::string name;
  std::vector<std::string> members;
};

struct SplitManifest {
  std::vector<SubsetSpec> parts;
  std::vector<CombinedSpec> combined;

  void validate() const {
    std::set<std::string> names;
    for (const auto& p : parts) {
      if (p.count <= 0) throw std::invalid_argument("SplitManifest: counts must be positive");
      if (!names.insert(p.name).second)
        throw std::invalid_argument("SplitManifest: duplicate subset name " + p.name);
    }
    for (const auto& c : combined) {
      if (!names.insert(c.name).second)
        throw std::invalid_argument("SplitManifest: duplicate subset name " + c.name);
      for (const auto& mref : c.members) {
        bool found = false;
        for (const auto& p : parts) found |= (p.name == mref);
        if (!found)
          throw std::invalid_argument("SplitManifest: combined subset " + c.name +
                                      " references unknown member " + mref);
      }
    }
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : parts) n += p.count;
    return n;
  }
};

// Nine 10-image training clients, a 10-image hold-out, and a 90-image
// combined view over the training clients.
inline SplitManifest default_manifest() {
  SplitManifest m;
  for (char c = 'A'; c <= 'I'; ++c)
    m.parts.push_back({std::string(1, c), 10, SubsetRole::train});
  m.parts.push_back({"J", 10, SubsetRole::holdout});
  CombinedSpec k;
  k.name = "K";
  for (char c = 'A'; c <= 'I'; ++c) k.members.push_back(std::string(1, c));
  m.combined.push_back(k);
  return m;
}

struct SplitResult {
  std::vector<ClientDataset> partition;  // disjoint, in manifest order
  std::vector<ClientDataset> combined;   // views over partition members

  const ClientDataset& find(const std::string& name) const {
    for (const auto& d : partition)
      if (d.subset_name == name) return d;
    for (const auto& d : combined)
      if (d.subset_name == name) return d;
    throw MissingInputError("subset not found: " + name);
  }
};

inline SplitResult build_experiment_splits(const std::vector<SemSample>& samples,
                                           const SplitManifest& manifest) {
  manifest.validate();
  if (static_cast<int64_t>(samples.size()) < manifest.total_count())
    throw std::invalid_argument("build_experiment_splits: insufficient samples (" +
                                std::to_string(samples.size()) + " < " +
                                std::to_string(manifest.total_count()) + ")");
  SplitResult out;
  size_t cursor = 0;
  int client_ordinal = 0;
  for (const auto& p : manifest.parts) {
    ClientDataset d;
    d.subset_name = p.name;
    d.owner = p.role == SubsetRole::holdout ? "holdout"
                                            : "client_" + std::to_string(client_ordinal++);
    d.samples.assign(samples.begin() + static_cast<int64_t>(cursor),
                     samples.begin() + static_cast<int64_t>(cursor) + p.count);
    cursor += static_cast<size_t>(p.count);
    out.partition.push_back(std::move(d));
  }
  for (const auto& c : manifest.combined) {
    ClientDataset d;
    d.subset_name = c.name;
    d.owner = "combined";
    for (const auto& member : c.members) {
      const auto& src = out.find(member);
      d.samples.insert(d.samples.end(), src.samples.begin(), src.samples.end());
    }
    out.combined.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

struct CorpusConfig {
  int64_t count = 100;
  int64_t height = 256, width = 256;
  double structure_density = 0.4;
  double density_jitter = 0.1;  // per-image uniform jitter around the mean density
  // Per-image uniform jitter of both class means, in gray levels. 0 keeps
  // every image at the configured means; nonzero models acquisition-to-
  // acquisition brightness/contrast drift, which makes small training sets
  // genuinely unrepresentative.
  double contrast_jitter = 0.0;
  NoiseConfig noise;
  uint64_t seed = 0;

  void validate() const {
    noise.validate();
    if (contrast_jitter < 0.0)
      throw std::invalid_argument("CorpusConfig: contrast_jitter must be >= 0");
    if (contrast_jitter > 0.0 &&
        noise.foreground_mean - noise.background_mean <= 2.0 * contrast_jitter)
      throw std::invalid_argument(
          "CorpusConfig: contrast_jitter must stay below half the class-mean gap");
  }
};

inline std::vector<SemSample> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::vector<SemSample> out;
  out.reserve(static_cast<size_t>(cfg.count));
  for (int64_t i = 0; i < cfg.count; ++i) {
    Rng drng(mix_seed(cfg.seed, "density", static_cast<uint64_t>(i)));
    const double d = std::clamp(
        cfg.structure_density + cfg.density_jitter * (2.0 * drng.uniform() - 1.0), 0.05, 0.9);
    LayoutMask mask =
        generate_layout(cfg.height, cfg.width, d, mix_seed(cfg.seed, "layout", static_cast<uint64_t>(i)));
    NoiseConfig nc = cfg.noise;
    nc.seed = mix_seed(cfg.seed, "render", static_cast<uint64_t>(i));
    if (cfg.contrast_jitter > 0.0) {
      Rng crng(mix_seed(cfg.seed, "contrast", static_cast<uint64_t>(i)));
      nc.background_mean += cfg.contrast_jitter * (2.0 * crng.uniform() - 1.0);
      nc.foreground_mean += cfg.contrast_jitter * (2.0 * crng.uniform() - 1.0);
    }
    SemSample s = render_sem(mask, nc);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sem_%03d", static_cast<int>(i));
    s.id = buf;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset (PNG per sample + JSON manifest)
// ---------------------------------------------------------------------------

inline nlohmann::json noise_to_json(const NoiseConfig& n) {
  return {{"background_mean", n.background_mean}, {"foreground_mean", n.foreground_mean},
          {"std_dev", n.std_dev},                 {"shot_noise", n.shot_noise},
          {"dwell_time_us", n.dwell_time_us},     {"seed", n.seed}};
}

inline NoiseConfig noise_from_json(const nlohmann::json& j) {
  NoiseConfig n;
  n.background_mean = j.at("background_mean").get<double>();
  n.foreground_mean = j.at("foreground_mean").get<double>();
  n.std_dev = j.at("std_dev").get<double>();
  n.shot_noise = j.at("shot_noise").get<double>();
  n.dwell_time_us = j.at("dwell_time_us").get<double>();
  n.seed = j.value("seed", uint64_t{0});
  return n;
}

inline void export_dataset(const std::string& dir, const SplitResult& splits,
                           const CorpusConfig& cfg, const SplitManifest& manifest_spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["height"] = cfg.height;
  manifest["width"] = cfg.width;
  manifest["seed"] = cfg.seed;
  manifest["structure_density"] = cfg.structure_density;
  manifest["density_jitter"] = cfg.density_jitter;
  manifest["contrast_jitter"] = cfg.contrast_jitter;
  manifest["noise"] = noise_to_json(cfg.noise);
  manifest["subsets"] = nlohmann::json::array();
  for (const auto& d : splits.partition) {
    fs::create_directories(fs::path(dir) / d.subset_name);
    nlohmann::json js;
    js["name"] = d.subset_name;
    js["owner"] = d.owner;
    js["role"] = d.owner == "holdout" ? "holdout" : "train";
    js["samples"] = nlohmann::json::array();
    for (const auto& s : d.samples) {
      const std::string img_rel = d.subset_name + "/" + s.id + ".png";
      const std::string mask_rel = d.subset_name + "/" + s.id + "_mask.png";
      write_png_gray8((fs::path(dir) / img_rel).string(), s.image);
      write_png_gray((fs::path(dir) / mask_rel).string(), s.mask.height, s.mask.width,
                     s.mask.pixels, 1);
      js["samples"].push_back({{"id", s.id}, {"image", img_rel}, {"mask", mask_rel}});
    }
    manifest["subsets"].push_back(js);
  }
  manifest["combined"] = nlohmann::json::array();
  for (const auto& c : manifest_spec.combined)
    manifest["combined"].push_back({{"name", c.name}, {"members", c.members}});
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

struct DatasetOnDisk {
  CorpusConfig config;
  SplitResult splits;
};

inline DatasetOnDisk import_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  if (!fs::exists(mpath)) throw MissingInputError("dataset manifest not found: " + mpath.string());
  std::ifstream in(mpath);
  nlohmann::json manifest;
  in >> manifest;

  DatasetOnDisk out;
  out.config.height = manifest.at("height").get<int64_t>();
  out.config.width = manifest.at("width").get<int64_t>();
  out.config.seed = manifest.value("seed", uint64_t{0});
  out.config.structure_density = manifest.value("structure_density", 0.4);
  out.config.contrast_jitter = manifest.value("contrast_jitter", 0.0);
  out.config.noise = noise_from_json(manifest.at("noise"));

  for (const auto& js : manifest.at("subsets")) {
    ClientDataset d;
    d.subset_name = js.at("name").get<std::string>();
    d.owner = js.at("owner").get<std::string>();
    for (const auto& sj : js.at("samples")) {
      SemSample s;
      s.id = sj.at("id").get<std::string>();
      GrayImage img = read_png_gray((fs::path(dir) / sj.at("image").get<std::string>()).string());
      s.image = img.to_unit_tensor();
      GrayImage msk = read_png_gray((fs::path(dir) / sj.at("mask").get<std::string>()).string());
      s.mask.height = msk.height;
      s.mask.width = msk.width;
      s.mask.pixels.resize(static_cast<size_t>(msk.height * msk.width));
      for (size_t i = 0; i < s.mask.pixels.size(); ++i) s.mask.pixels[i] = msk.pixels[i] ? 1 : 0;
      d.samples.push_back(std::move(s));
    }
    out.splits.partition.push_back(std::move(d));
  }
  for (const auto& cj : manifest.value("combined", nlohmann::json::array())) {
    ClientDataset d;
    d.subset_name = cj.at("name").get<std::string>();
    d.owner = "combined";
    for (const auto& member : cj.at("members")) {
      const auto& src = out.splits.find(member.get<std::string>());
      d.samples.insert(d.samples.end(), src.samples.begin(), src.samples.end());
    }
    out.splits.combined.push_back(std::move(d));
  }
  return out;
}

}  // namespace fedsem
