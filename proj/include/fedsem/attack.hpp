#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsem/errors.hpp"
#include "fedsem/metrics.hpp"
#include "fedsem/model.hpp"

namespace fedsem {

// Gradient inversion: recover a client's private image from the weight pair
// it shared. Gradients are estimated from the weight delta, then a dummy
// image and dummy mask are optimized jointly until the gradients they induce
// match the intercepted ones. No ground-truth mask is assumed; the mask is a
// free variable parameterized through a sigmoid so it stays in (0,1).

struct AttackConfig {
  enum class Optimizer { adam, lbfgs };
  enum class Init { uniform_random, gaussian, constant_gray };

  double alpha = 0.5;  // matching loss = alpha * MSE + (1 - alpha) * (1 - cosine)
  Optimizer optimizer = Optimizer::adam;
  double attack_lr = 0.1;
  int iterations = 2000;
  Init init = Init::uniform_random;
  uint64_t seed = 0;
  bool clamp_inputs = true;   // project the dummy image back into [0,1] after each step
  int snapshot_interval = 0;  // 0: iterations / 8
  double tv_prior = 0.0;      // optional smoothness prior; 0 reproduces the bare method
  // step learning-rate decay (x0.1 at 3/8, 5/8 and 7/8 of the budget), the
  // schedule used by the adam-style attacks this follows; adam only
  bool lr_decay = true;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("AttackConfig: alpha must lie in [0,1]");
    if (iterations < 1) throw ConfigError("AttackConfig: iterations must be >= 1");
    if (!(attack_lr > 0.0)) throw ConfigError("AttackConfig: attack_lr must be positive");
    if (tv_prior < 0.0) throw ConfigError("AttackConfig: tv_prior must be >= 0");
  }
};

struct AttackState {
  Tensor dummy_image;
  Tensor dummy_mask_logits;
  int iteration = 0;
  std::vector<double> loss_trace;
  struct Best {
    int iteration = -1;
    Tensor image;
    Tensor mask;
    double loss = std::numeric_limits<double>::infinity();
  } best;
};

struct AttackReport {
  Tensor reconstructed_image;  // best-loss iterate
  Tensor reconstructed_mask;   // probability map
  GradientEstimate::Provenance target_provenance = GradientEstimate::Provenance::captured;
  double alpha = 0.5;
  double final_loss = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  std::vector<double> loss_trace;
  std::vector<std::pair<int, Tensor>> snapshots;  // (iteration, dummy image)
  bool diverged = false;
  bool cs_degenerate = false;
  std::optional<MetricsReport> metrics;  // only when ground truth was supplied

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["final_loss"] = final_loss;
    j["best_iteration"] = best_iteration;
    j["iterations_run"] = loss_trace.size();
    j["target_provenance"] =
        target_provenance == GradientEstimate::Provenance::recovered ? "recovered" : "captured";
    j["diverged"] = diverged;
    j["cs_degenerate"] = cs_degenerate;
    if (metrics) j["metrics"] = metrics->to_json();
    return j;
  }
};

// ---------------------------------------------------------------------------
// Gradient recovery from a weight snapshot pair
// ---------------------------------------------------------------------------

// (old - new) / lr. Exact, not approximate, when the update was one
// full-batch plain-SGD step.
inline GradientEstimate recover_gradient(const ModelWeights& old_weights,
                                         const ModelWeights& new_weights, double learning_rate) {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("recover_gradient: learning rate must be positive");
  require_compatible(old_weights, new_weights, "recover_gradient");
  GradientEstimate g;
  g.model_tag = old_weights.model_tag;
  g.provenance = GradientEstimate::Provenance::recovered;
  g.learning_rate_used = learning_rate;
  for (size_t e = 0; e < old_weights.entries.size(); ++e) {
    Tensor t = old_weights.entries[e].second;
    t.add_scaled(new_weights.entries[e].second, -1.0);
    t.scale(1.0 / learning_rate);
    g.entries.emplace_back(old_weights.entries[e].first, std::move(t));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Matching loss
// ---------------------------------------------------------------------------

namespace detail {

// alpha * mean squared difference over all elements (concatenated across
// parameters) + (1 - alpha) * (1 - cosine between the flattened vectors).
// A zero-norm side makes the cosine undefined; the term then degrades to the
// maximal dissimilarity 1 and the caller is told.
inline ag::NodePtr matching_loss_node(const std::vector<ag::NodePtr>& dummy,
                                      const std::vector<ag::NodePtr>& target, double alpha,
                                      bool* cs_degenerate) {
  if (dummy.size() != target.size())
    throw std::invalid_argument("matching_loss: gradient lists differ in length");
  int64_t total = 0;
  for (size_t i = 0; i < dummy.size(); ++i) {
    dummy[i]->value.require_same_shape(target[i]->value, "matching_loss");
    total += dummy[i]->value.numel();
  }
  if (total == 0) throw std::invalid_argument("matching_loss: empty gradients");

  ag::NodePtr loss = ag::constant(Tensor::scalar(0.0));
  if (alpha > 0.0) {
    ag::NodePtr sq_sum = ag::constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < dummy.size(); ++i) {
      auto d = ag::sub(dummy[i], target[i]);
      sq_sum = ag::add(sq_sum, ag::sum_all(ag::mul(d, d)));
    }
    loss = ag::scale(sq_sum, alpha / static_cast<double>(total));
  }
  if (alpha < 1.0) {
    ag::NodePtr num = ag::constant(Tensor::scalar(0.0));
    ag::NodePtr dd = ag::constant(Tensor::scalar(0.0));
    ag::NodePtr tt = ag::constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < dummy.size(); ++i) {
      num = ag::add(num, ag::dot(dummy[i], target[i]));
      dd = ag::add(dd, ag::dot(dummy[i], dummy[i]));
      tt = ag::add(tt, ag::dot(target[i], target[i]));
    }
    if (dd->value[0] <= 0.0 || tt->value[0] <= 0.0) {
      if (cs_degenerate) *cs_degenerate = true;
      loss = ag::add(loss, ag::constant(Tensor::scalar(1.0 - alpha)));
    } else {
      auto cos = ag::div(num, ag::mul(ag::sqrt_n(dd), ag::sqrt_n(tt)));
      loss = ag::add(loss, ag::scale(ag::one_minus(cos), 1.0 - alpha));
    }
  }
  return loss;
}

inline std::vector<ag::NodePtr> entries_as_constants(const NamedTensors& entries) {
  std::vector<ag::NodePtr> out;
  out.reserve(entries.size());
  for (const auto& [name, t] : entries) out.push_back(ag::constant(t));
  return out;
}

// squared total variation of a [H,W] node, built from shift convolutions
inline ag::NodePtr tv_node(const ag::NodePtr& img, int64_t H, int64_t W) {
  auto x = ag::reshape(img, {1, H, W});
  Tensor kx({1, 1, 1, 2}, {-1.0, 1.0});
  Tensor ky({1, 1, 2, 1}, {-1.0, 1.0});
  auto gx = ag::conv2d(x, ag::constant(kx), 0);
  auto gy = ag::conv2d(x, ag::constant(ky), 0);
  return ag::add(ag::sum_all(ag::mul(gx, gx)), ag::sum_all(ag::mul(gy, gy)));
}

}  // namespace detail

inline double matching_loss(const GradientEstimate& dummy, const GradientEstimate& target,
                            double alpha, bool* cs_degenerate = nullptr) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("matching_loss: alpha in [0,1]");
  bool degen = false;
  auto node = detail::matching_loss_node(detail::entries_as_constants(dummy.entries),
                                         detail::entries_as_constants(target.entries), alpha,
                                         &degen);
  if (cs_degenerate) *cs_degenerate = degen;
  return node->value[0];
}

// ---------------------------------------------------------------------------
// Attack optimization
// ---------------------------------------------------------------------------

// Deterministic initial dummies for a given config; exposed so tests can
// reproduce the fixed-point scenario exactly.
inline std::pair<Tensor, Tensor> attack_init(const AttackConfig& cfg, int64_t H, int64_t W) {
  Rng img_rng(mix_seed(cfg.seed, "attack_image"));
  Rng mask_rng(mix_seed(cfg.seed, "attack_mask"));
  Tensor img({H, W});
  switch (cfg.init) {
    case AttackConfig::Init::uniform_random:
      for (int64_t i = 0; i < img.numel(); ++i) img[i] = img_rng.uniform();
      break;
    case AttackConfig::Init::gaussian:
      for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = std::clamp(img_rng.normal(0.5, 0.25), 0.0, 1.0);
      break;
    case AttackConfig::Init::constant_gray:
      img = Tensor::full({H, W}, 0.5);
      break;
  }
  Tensor logits({H, W});
  for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = mask_rng.normal(0.0, 0.25);
  return {std::move(img), std::move(logits)};
}

namespace detail {

struct AttackObjective {
  const ModelSpec spec;
  const std::vector<ag::NodePtr> params;         // frozen global weights, trainable flags on
  const std::vector<ag::NodePtr> target_consts;  // intercepted gradients
  const AttackConfig& cfg;
  bool cs_degenerate = false;

  AttackObjective(const ModelSpec& s, const ModelWeights& weights, const GradientEstimate& target,
                  const AttackConfig& c)
      : spec(s),
        params(params_as_leaves(weights, true)),
        target_consts(entries_as_constants(target.entries)),
        cfg(c) {}

  // loss value and gradients with respect to (image, mask logits)
  double eval(const Tensor& image, const Tensor& logits, Tensor& g_img, Tensor& g_logits) {
    auto img_leaf = ag::leaf(image);
    auto logit_leaf = ag::leaf(logits);
    auto fg = assemble_forward(spec, params, img_leaf);
    auto mask_prob = ag::sigmoid(logit_leaf);
    auto train_loss = bce_loss(fg.output, mask_prob);
    auto grads = ag::backward(train_loss);

    std::vector<ag::NodePtr> dummy_grads;
    dummy_grads.reserve(params.size());
    for (const auto& p : params) {
      auto it = grads.find(p.get());
      dummy_grads.push_back(it != grads.end() ? it->second
                                              : ag::constant(Tensor::zeros(p->value.shape())));
    }
    bool degen = false;
    auto objective = matching_loss_node(dummy_grads, target_consts, cfg.alpha, &degen);
    cs_degenerate = cs_degenerate || degen;
    if (cfg.tv_prior > 0.0)
      objective =
          ag::add(objective, ag::scale(tv_node(img_leaf, spec.height, spec.width), cfg.tv_prior));

    auto outer = ag::backward(objective);
    g_img = ag::grad_of(outer, img_leaf);
    g_logits = ag::grad_of(outer, logit_leaf);
    return objective->value[0];
  }
};

struct AdamState {
  Tensor m, v;
  explicit AdamState(const std::vector<int64_t>& shape)
      : m(Tensor::zeros(shape)), v(Tensor::zeros(shape)) {}
  void step(Tensor& x, const Tensor& g, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (int64_t i = 0; i < x.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

inline void record_progress(AttackState& st, const Tensor& mask_prob_now, double loss) {
  st.loss_trace.push_back(loss);
  if (loss < st.best.loss) {
    st.best.loss = loss;
    st.best.iteration = st.iteration;
    st.best.image = st.dummy_image;
    st.best.mask = mask_prob_now;
  }
}

inline Tensor sigmoid_tensor(const Tensor& logits) {
  Tensor p = logits;
  for (int64_t i = 0; i < p.numel(); ++i)
    p[i] = p[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-p[i])) : std::exp(p[i]) / (1.0 + std::exp(p[i]));
  return p;
}

}  // namespace detail

inline AttackReport run_attack(const GradientEstimate& target, const ModelWeights& weights,
                               const AttackConfig& cfg, const SemSample* ground_truth = nullptr) {
  cfg.validate();
  require_aligned(weights.entries, target.entries, "run_attack");
  const ModelSpec spec = ModelSpec::from_tag(weights.model_tag);
  const int snapshot_every =
      cfg.snapshot_interval > 0 ? cfg.snapshot_interval : std::max(1, cfg.iterations / 8);

  AttackState st;
  std::tie(st.dummy_image, st.dummy_mask_logits) = attack_init(cfg, spec.height, spec.width);

  AttackReport report;
  report.alpha = cfg.alpha;
  report.target_provenance = target.provenance;

  detail::AttackObjective objective(spec, weights, target, cfg);
  Tensor g_img, g_logits;

  if (cfg.optimizer == AttackConfig::Optimizer::adam) {
    detail::AdamState adam_img(st.dummy_image.shape());
    detail::AdamState adam_logits(st.dummy_mask_logits.shape());
    for (int it = 1; it <= cfg.iterations; ++it) {
      st.iteration = it;
      const double loss = objective.eval(st.dummy_image, st.dummy_mask_logits, g_img, g_logits);
      if (!std::isfinite(loss)) {
        report.diverged = true;
        break;
      }
      detail::record_progress(st, detail::sigmoid_tensor(st.dummy_mask_logits), loss);
      if (it == 1 || it % snapshot_every == 0 || it == cfg.iterations)
        report.snapshots.emplace_back(it, st.dummy_image);
      double lr = cfg.attack_lr;
      if (cfg.lr_decay) {
        const double frac = static_cast<double>(it) / cfg.iterations;
        if (frac > 0.875)
          lr *= 0.001;
        else if (frac > 0.625)
          lr *= 0.01;
        else if (frac > 0.375)
          lr *= 0.1;
      }
      adam_img.step(st.dummy_image, g_img, lr, it);
      adam_logits.step(st.dummy_mask_logits, g_logits, lr, it);
      if (cfg.clamp_inputs)
        for (int64_t i = 0; i < st.dummy_image.numel(); ++i)
          st.dummy_image[i] = std::clamp(st.dummy_image[i], 0.0, 1.0);
    }
  } else {
    // L-BFGS with Armijo backtracking over the joint (image, logits) vector.
    const int64_t n_img = st.dummy_image.numel();
    const int64_t n = n_img + st.dummy_mask_logits.numel();
    auto pack = [&](const Tensor& a, const Tensor& b) {
      Tensor z({n});
      std::copy(a.data(), a.data() + n_img, z.data());
      std::copy(b.data(), b.data() + n - n_img, z.data() + n_img);
      return z;
    };
    auto unpack = [&](const Tensor& z, Tensor& a, Tensor& b) {
      std::copy(z.data(), z.data() + n_img, a.data());
      std::copy(z.data() + n_img, z.data() + n, b.data());
    };
    auto project = [&](Tensor& z) {
      if (cfg.clamp_inputs)
        for (int64_t i = 0; i < n_img; ++i) z[i] = std::clamp(z[i], 0.0, 1.0);
    };
    auto f_and_g = [&](const Tensor& z, Tensor& gz) {
      Tensor img = st.dummy_image, logits = st.dummy_mask_logits;
      unpack(z, img, logits);
      Tensor gi, gl;
      const double f = objective.eval(img, logits, gi, gl);
      gz = pack(gi, gl);
      return f;
    };

    constexpr int kHistory = 10;
    std::vector<Tensor> s_hist, y_hist;
    std::vector<double> rho;
    Tensor z = pack(st.dummy_image, st.dummy_mask_logits);
    project(z);
    Tensor g({n}), g_new({n});
    double f = f_and_g(z, g);

    for (int it = 1; it <= cfg.iterations; ++it) {
      st.iteration = it;
      if (!std::isfinite(f)) {
        report.diverged = true;
        break;
      }
      unpack(z, st.dummy_image, st.dummy_mask_logits);
      detail::record_progress(st, detail::sigmoid_tensor(st.dummy_mask_logits), f);
      if (it == 1 || it % snapshot_every == 0 || it == cfg.iterations)
        report.snapshots.emplace_back(it, st.dummy_image);

      // two-loop recursion
      Tensor q = g;
      std::vector<double> alpha_hist(s_hist.size());
      for (size_t k = s_hist.size(); k-- > 0;) {
        alpha_hist[k] = rho[k] * s_hist[k].dot(q);
        q.add_scaled(y_hist[k], -alpha_hist[k]);
      }
      if (!s_hist.empty()) {
        const double gamma =
            s_hist.back().dot(y_hist.back()) / std::max(y_hist.back().squared_norm(), 1e-30);
        q.scale(gamma);
      }
      for (size_t k = 0; k < s_hist.size(); ++k) {
        const double beta = rho[k] * y_hist[k].dot(q);
        q.add_scaled(s_hist[k], alpha_hist[k] - beta);
      }
      // q is now the ascent direction estimate; step along -q
      double step = 1.0;
      const double g_dot_d = g.dot(q);
      bool accepted = false;
      Tensor z_new = z;
      double f_new = f;
      for (int ls = 0; ls < 30; ++ls) {
        z_new = z;
        z_new.add_scaled(q, -step);
        project(z_new);
        f_new = f_and_g(z_new, g_new);
        if (std::isfinite(f_new) && f_new <= f - 1e-4 * step * g_dot_d) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;  // no further progress along this direction

      Tensor s = z_new;
      s.add_scaled(z, -1.0);
      Tensor y = g_new;
      y.add_scaled(g, -1.0);
      const double sy = s.dot(y);
      if (sy > 1e-12) {
        s_hist.push_back(std::move(s));
        y_hist.push_back(std::move(y));
        rho.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > kHistory) {
          s_hist.erase(s_hist.begin());
          y_hist.erase(y_hist.begin());
          rho.erase(rho.begin());
        }
      }
      z = std::move(z_new);
      g = g_new;
      f = f_new;
    }
    unpack(z, st.dummy_image, st.dummy_mask_logits);
    if (std::isfinite(f) && f < st.best.loss) {
      st.best.loss = f;
      st.best.iteration = st.iteration;
      st.best.image = st.dummy_image;
      st.best.mask = detail::sigmoid_tensor(st.dummy_mask_logits);
    }
  }

  report.cs_degenerate = objective.cs_degenerate;
  if (st.best.iteration < 0) {
    // diverged on the very first evaluation; report the raw init
    report.reconstructed_image = st.dummy_image;
    report.reconstructed_mask = detail::sigmoid_tensor(st.dummy_mask_logits);
  } else {
    report.reconstructed_image = st.best.image;
    report.reconstructed_mask = st.best.mask;
    report.final_loss = st.best.loss;
    report.best_iteration = st.best.iteration;
  }
  report.loss_trace = std::move(st.loss_trace);
  // structural metrics need room for the ssim window; tiny oracle models skip them
  if (ground_truth && !report.diverged && spec.height >= 11 && spec.width >= 11)
    report.metrics = evaluate_reconstruction(report.reconstructed_image, *ground_truth);
  return report;
}

// One independent attack per alpha, same seed. With ground truth available
// reports are ordered by reconstruction quality, otherwise by matching loss.
inline std::vector<AttackReport> sweep_alpha(const GradientEstimate& target,
                                             const ModelWeights& weights, const AttackConfig& base,
                                             const SemSample* ground_truth,
                                             const std::vector<double>& alphas) {
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep_alpha: alpha must lie in [0,1]");
  std::vector<AttackReport> reports(alphas.size());
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::future<AttackReport>> futs;
  for (size_t i = 0; i < alphas.size(); ++i) {
    AttackConfig cfg = base;
    cfg.alpha = alphas[i];
    if (workers > 1) {
      futs.push_back(std::async(std::launch::async, [cfg, &target, &weights, ground_truth] {
        return run_attack(target, weights, cfg, ground_truth);
      }));
      if (futs.size() == workers || i + 1 == alphas.size()) {
        const size_t base_idx = i + 1 - futs.size();
        for (size_t k = 0; k < futs.size(); ++k) reports[base_idx + k] = futs[k].get();
        futs.clear();
      }
    } else {
      reports[i] = run_attack(target, weights, cfg, ground_truth);
    }
  }
  std::stable_sort(reports.begin(), reports.end(), [](const AttackReport& a, const AttackReport& b) {
    if (a.metrics && b.metrics) {
      if (a.metrics->ssim != b.metrics->ssim) return a.metrics->ssim > b.metrics->ssim;
      return a.metrics->psnr_db > b.metrics->psnr_db;
    }
    return a.final_loss < b.final_loss;
  });
  return reports;
}

}  // namespace fedsem
