#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsem/autodiff.hpp"
#include "fedsem/datagen.hpp"
#include "fedsem/errors.hpp"
#include "fedsem/random.hpp"
#include "fedsem/tensor.hpp"

namespace fedsem {

// Segmentation models: a U-Net (plain conv + SiLU, no normalization layers,
// so a one-step SGD weight delta is exactly -lr * gradient) and a tiny
// single-dense-layer model whose weight gradient has rank-1 structure,
// usable as an analytic recovery oracle.

enum class Architecture { unet, toy_linear };

struct ModelSpec {
  Architecture arch = Architecture::unet;
  int64_t height = 256;
  int64_t width = 256;
  int depth = 4;          // unet down/up stages
  int base_channels = 16; // unet channels at full resolution

  void validate() const {
    if (arch == Architecture::unet) {
      if (height < 8 || width < 8) throw std::invalid_argument("ModelSpec: dims must be >= 8");
      if (depth < 1 || depth > 6) throw std::invalid_argument("ModelSpec: depth out of range");
      if (base_channels < 1) throw std::invalid_argument("ModelSpec: base_channels must be >= 1");
      const int64_t div = int64_t{1} << depth;
      if (height % div || width % div)
        throw std::invalid_argument("ModelSpec: dims must be divisible by 2^depth");
    } else {
      if (height < 2 || width < 2) throw std::invalid_argument("ModelSpec: dims must be >= 2");
    }
  }

  std::string tag() const {
    if (arch == Architecture::toy_linear)
      return "toy:" + std::to_string(height) + "x" + std::to_string(width);
    return "unet:d" + std::to_string(depth) + ":b" + std::to_string(base_channels) + ":" +
           std::to_string(height) + "x" + std::to_string(width);
  }

  static ModelSpec from_tag(const std::string& tag) {
    ModelSpec s;
    long long h = 0, w = 0;
    int d = 0, b = 0;
    if (std::sscanf(tag.c_str(), "toy:%lldx%lld", &h, &w) == 2) {
      s.arch = Architecture::toy_linear;
      s.height = h;
      s.width = w;
    } else if (std::sscanf(tag.c_str(), "unet:d%d:b%d:%lldx%lld", &d, &b, &h, &w) == 4) {
      s.arch = Architecture::unet;
      s.depth = d;
      s.base_channels = b;
      s.height = h;
      s.width = w;
    } else {
      throw std::invalid_argument("ModelSpec: unrecognized model tag '" + tag + "'");
    }
    s.validate();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void require_aligned(const NamedTensors& a, const NamedTensors& b, const char* who) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(who) + ": entry count mismatch");
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first)
      throw std::invalid_argument(std::string(who) + ": entry name mismatch at " + a[i].first);
    a[i].second.require_same_shape(b[i].second, who);
  }
}

struct ModelWeights {
  std::string model_tag;
  int64_t version = 0;  // round index
  NamedTensors entries;

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries) n += t.numel();
    return n;
  }

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw std::invalid_argument("ModelWeights: no entry named " + name);
  }
};

struct GradientEstimate {
  enum class Provenance { captured, recovered };
  std::string model_tag;
  Provenance provenance = Provenance::captured;
  double learning_rate_used = std::numeric_limits<double>::quiet_NaN();  // recovered only
  NamedTensors entries;

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries) n += t.numel();
    return n;
  }
};

inline void require_compatible(const ModelWeights& a, const ModelWeights& b, const char* who) {
  if (a.model_tag != b.model_tag)
    throw std::invalid_argument(std::string(who) + ": model tag mismatch");
  require_aligned(a.entries, b.entries, who);
}

inline ModelWeights weights_add(const ModelWeights& a, const ModelWeights& b) {
  require_compatible(a, b, "weights_add");
  ModelWeights out = a;
  for (size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].second.add_scaled(b.entries[i].second, 1.0);
  return out;
}

inline ModelWeights weights_sub(const ModelWeights& a, const ModelWeights& b) {
  require_compatible(a, b, "weights_sub");
  ModelWeights out = a;
  for (size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].second.add_scaled(b.entries[i].second, -1.0);
  return out;
}

inline ModelWeights weights_scale(const ModelWeights& a, double s) {
  ModelWeights out = a;
  for (auto& [name, t] : out.entries) t.scale(s);
  return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor gaussian_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

struct UnetLevel {
  int64_t in_ch, out_ch;
};

}  // namespace detail

inline ModelWeights build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  ModelWeights w;
  w.model_tag = spec.tag();
  w.version = 0;
  Rng rng(mix_seed(seed, "model_init"));

  auto conv = [&](const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k, bool head) {
    const double fan_in = static_cast<double>(in_ch * k * k);
    const double stddev = head ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in);
    w.entries.emplace_back(name + ".w", detail::gaussian_init({out_ch, in_ch, k, k}, stddev, rng));
    w.entries.emplace_back(name + ".b", Tensor::zeros({out_ch}));
  };

  if (spec.arch == Architecture::toy_linear) {
    const int64_t n = spec.height * spec.width;
    w.entries.emplace_back("fc.w", detail::gaussian_init({n, n}, std::sqrt(1.0 / n), rng));
    w.entries.emplace_back("fc.b", Tensor::zeros({n}));
    return w;
  }

  const int64_t B = spec.base_channels;
  for (int i = 0; i < spec.depth; ++i) {
    const int64_t in_ch = i == 0 ? 1 : B << (i - 1);
    const int64_t out_ch = B << i;
    conv("enc" + std::to_string(i) + ".conv1", in_ch, out_ch, 3, false);
    conv("enc" + std::to_string(i) + ".conv2", out_ch, out_ch, 3, false);
  }
  const int64_t bott_in = B << (spec.depth - 1);
  conv("bott.conv1", bott_in, bott_in * 2, 3, false);
  conv("bott.conv2", bott_in * 2, bott_in * 2, 3, false);
  for (int i = spec.depth - 1; i >= 0; --i) {
    const int64_t ch = B << i;
    conv("dec" + std::to_string(i) + ".up", ch * 2, ch, 3, false);
    conv("dec" + std::to_string(i) + ".conv1", ch * 2, ch, 3, false);
    conv("dec" + std::to_string(i) + ".conv2", ch, ch, 3, false);
  }
  conv("head", B, 1, 1, true);
  return w;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

struct ForwardGraph {
  ag::NodePtr input;                 // [H,W]
  std::vector<ag::NodePtr> params;   // aligned with ModelWeights::entries
  ag::NodePtr output;                // [H,W] probability map
};

namespace detail {

inline ag::NodePtr conv_block(const ag::NodePtr& x, const ag::NodePtr& kw, const ag::NodePtr& kb,
                              int64_t pad) {
  return ag::silu(ag::bias_add(ag::conv2d(x, kw, pad), kb));
}

}  // namespace detail

// `params` must follow build_model's entry order; leaves give trainable
// parameters, constants give frozen ones.
inline ForwardGraph assemble_forward(const ModelSpec& spec, std::vector<ag::NodePtr> params,
                                     ag::NodePtr input) {
  spec.validate();
  if (input->value.ndim() != 2 || input->value.dim(0) != spec.height ||
      input->value.dim(1) != spec.width)
    throw std::invalid_argument("assemble_forward: input shape mismatch, expected " +
                                std::to_string(spec.height) + "x" + std::to_string(spec.width));
  ForwardGraph g;
  g.input = input;
  g.params = std::move(params);

  size_t idx = 0;
  auto next_pair = [&]() {
    auto wb = std::pair{g.params.at(idx), g.params.at(idx + 1)};
    idx += 2;
    return wb;
  };

  if (spec.arch == Architecture::toy_linear) {
    auto [fw, fb] = next_pair();
    auto flat = ag::reshape(input, {spec.height * spec.width});
    auto logits = ag::add(ag::matvec(fw, flat), fb);
    g.output = ag::reshape(ag::sigmoid(logits), {spec.height, spec.width});
    return g;
  }

  auto h = ag::reshape(input, {1, spec.height, spec.width});
  std::vector<ag::NodePtr> skips;
  for (int i = 0; i < spec.depth; ++i) {
    auto [w1, b1] = next_pair();
    auto [w2, b2] = next_pair();
    h = detail::conv_block(h, w1, b1, 1);
    h = detail::conv_block(h, w2, b2, 1);
    skips.push_back(h);
    h = ag::avg_pool2(h);
  }
  {
    auto [w1, b1] = next_pair();
    auto [w2, b2] = next_pair();
    h = detail::conv_block(h, w1, b1, 1);
    h = detail::conv_block(h, w2, b2, 1);
  }
  for (int i = spec.depth - 1; i >= 0; --i) {
    auto [wu, bu] = next_pair();
    auto [w1, b1] = next_pair();
    auto [w2, b2] = next_pair();
    h = detail::conv_block(ag::upsample2(h), wu, bu, 1);
    h = ag::concat_ch(skips[static_cast<size_t>(i)], h);
    h = detail::conv_block(h, w1, b1, 1);
    h = detail::conv_block(h, w2, b2, 1);
  }
  auto [hw, hb] = next_pair();
  auto logits = ag::bias_add(ag::conv2d(h, hw, 0), hb);
  g.output = ag::reshape(ag::sigmoid(logits), {spec.height, spec.width});
  return g;
}

inline std::vector<ag::NodePtr> params_as_leaves(const ModelWeights& w, bool requires_grad) {
  std::vector<ag::NodePtr> out;
  out.reserve(w.entries.size());
  for (const auto& [name, t] : w.entries)
    out.push_back(requires_grad ? ag::leaf(t) : ag::constant(t));
  return out;
}

inline Tensor forward(const ModelWeights& weights, const Tensor& image) {
  const ModelSpec spec = ModelSpec::from_tag(weights.model_tag);
  auto g = assemble_forward(spec, params_as_leaves(weights, false), ag::constant(image));
  return g.output->value;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

inline constexpr double kBceEps = 1e-7;

// Mean binary cross-entropy; `target` may be a soft map in (0,1).
inline ag::NodePtr bce_loss(const ag::NodePtr& pred, const ag::NodePtr& target) {
  pred->value.require_same_shape(target->value, "bce_loss");
  auto p = ag::clamp(pred, kBceEps, 1.0 - kBceEps);
  auto term = ag::add(ag::mul(target, ag::log_n(p)),
                      ag::mul(ag::one_minus(target), ag::log_n(ag::one_minus(p))));
  return ag::scale(ag::mean_all(term), -1.0);
}

inline double segmentation_loss(const Tensor& pred, const Tensor& mask01) {
  return bce_loss(ag::constant(pred), ag::constant(mask01))->value[0];
}

inline double segmentation_loss(const Tensor& pred, const LayoutMask& mask) {
  return segmentation_loss(pred, mask.to_unit_tensor());
}

// Exact gradient of the mean per-sample BCE over the batch.
inline GradientEstimate compute_gradients(const ModelWeights& weights,
                                          const std::vector<SemSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("compute_gradients: empty batch");
  const ModelSpec spec = ModelSpec::from_tag(weights.model_tag);

  GradientEstimate grad;
  grad.model_tag = weights.model_tag;
  grad.provenance = GradientEstimate::Provenance::captured;
  for (const auto& [name, t] : weights.entries)
    grad.entries.emplace_back(name, Tensor::zeros(t.shape()));

  auto params = params_as_leaves(weights, true);
  for (const auto& sample : batch) {
    auto g = assemble_forward(spec, params, ag::constant(sample.image));
    auto loss = bce_loss(g.output, ag::constant(sample.mask.to_unit_tensor()));
    auto grads = ag::backward(loss);
    for (size_t i = 0; i < params.size(); ++i)
      grad.entries[i].second.add_scaled(ag::grad_of(grads, params[i]), 1.0);
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (auto& [name, t] : grad.entries) t.scale(inv_n);
  return grad;
}

// ---------------------------------------------------------------------------
// Snapshot wire format
// ---------------------------------------------------------------------------

// Self-describing little-endian container: magic "FSW1", format u32,
// model_tag, version i64, then (name, dims, float32 data) per entry. This is
// exactly what a client hands to the aggregation server.

static_assert(std::endian::native == std::endian::little,
              "snapshot wire format assumes a little-endian host");

namespace detail {

template <typename T>
inline void put_raw(std::vector<uint8_t>& buf, const T& v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
inline T get_raw(std::span<const uint8_t> buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw std::runtime_error("snapshot: truncated data");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

inline void put_string(std::vector<uint8_t>& buf, const std::string& s) {
  put_raw<uint32_t>(buf, static_cast<uint32_t>(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

inline std::string get_string(std::span<const uint8_t> buf, size_t& off) {
  const uint32_t n = get_raw<uint32_t>(buf, off);
  if (off + n > buf.size()) throw std::runtime_error("snapshot: truncated string");
  std::string s(reinterpret_cast<const char*>(buf.data() + off), n);
  off += n;
  return s;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_weights(const ModelWeights& w) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), {'F', 'S', 'W', '1'});
  detail::put_raw<uint32_t>(buf, 1);
  detail::put_string(buf, w.model_tag);
  detail::put_raw<int64_t>(buf, w.version);
  detail::put_raw<uint32_t>(buf, static_cast<uint32_t>(w.entries.size()));
  for (const auto& [name, t] : w.entries) {
    detail::put_string(buf, name);
    detail::put_raw<uint32_t>(buf, static_cast<uint32_t>(t.ndim()));
    for (int64_t d : t.shape()) detail::put_raw<int64_t>(buf, d);
    for (int64_t i = 0; i < t.numel(); ++i)
      detail::put_raw<float>(buf, static_cast<float>(t[i]));
  }
  return buf;
}

inline ModelWeights deserialize_weights(std::span<const uint8_t> buf) {
  size_t off = 0;
  if (buf.size() < 8 || buf[0] != 'F' || buf[1] != 'S' || buf[2] != 'W' || buf[3] != '1')
    throw std::runtime_error("snapshot: bad magic");
  off = 4;
  const uint32_t fmt = detail::get_raw<uint32_t>(buf, off);
  if (fmt != 1) throw std::runtime_error("snapshot: unsupported format version");
  ModelWeights w;
  w.model_tag = detail::get_string(buf, off);
  w.version = detail::get_raw<int64_t>(buf, off);
  const uint32_t n = detail::get_raw<uint32_t>(buf, off);
  for (uint32_t e = 0; e < n; ++e) {
    const std::string name = detail::get_string(buf, off);
    const uint32_t ndim = detail::get_raw<uint32_t>(buf, off);
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = detail::get_raw<int64_t>(buf, off);
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<double>(detail::get_raw<float>(buf, off));
    w.entries.emplace_back(name, std::move(t));
  }
  return w;
}

inline void write_weights(const std::string& path, const ModelWeights& w) {
  const auto buf = serialize_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline ModelWeights read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("snapshot not found: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), {});
  return deserialize_weights(buf);
}

inline uint64_t weights_digest(const ModelWeights& w) {
  const auto buf = serialize_weights(w);
  uint64_t h = 0xcbf29ce484222325ull;
  for (uint8_t b : buf) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string digest_hex(uint64_t d) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace fedsem
