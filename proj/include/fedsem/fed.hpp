#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsem/datagen.hpp"
#include "fedsem/errors.hpp"
#include "fedsem/metrics.hpp"
#include "fedsem/model.hpp"

namespace fedsem {

// FedAvg protocol simulation: broadcast -> local SGD epochs per client ->
// sample-weighted aggregation -> hold-out evaluation, one RoundRecord per
// round. Centralized baselines run through the identical code path with a
// single synthetic client, which keeps the two modes bit-comparable.

struct TrainConfig {
  enum class Optimizer { sgd, sgd_momentum };

  double learning_rate = 0.01;
  int local_epochs = 1;
  int batch_size = 2;
  int rounds = 100;
  Optimizer optimizer = Optimizer::sgd;
  double momentum = 0.9;
  double participation_fraction = 1.0;
  // Guarantees (old - new) == lr * gradient per round: plain SGD, one local
  // epoch, and (checked at update time) a batch covering the whole dataset.
  bool attack_compatible = false;
  uint64_t seed = 0;

  void validate() const {
    if (learning_rate < 0.0) throw ConfigError("TrainConfig: learning_rate must be >= 0");
    if (local_epochs < 1) throw ConfigError("TrainConfig: local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (rounds < 1) throw ConfigError("TrainConfig: rounds must be >= 1");
    if (!(participation_fraction > 0.0 && participation_fraction <= 1.0))
      throw ConfigError("TrainConfig: participation_fraction must lie in (0,1]");
    if (attack_compatible && (optimizer != Optimizer::sgd || local_epochs != 1))
      throw ConfigError("TrainConfig: attack_compatible requires plain sgd with one local epoch");
  }
};

struct HoldoutMetrics {
  double loss = 0.0, iou = 0.0, mse = 0.0, ssim = 0.0;
};

struct ClientRoundInfo {
  std::string client_id;
  int64_t sample_count = 0;
  uint64_t update_digest = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<ClientRoundInfo> clients;
  uint64_t aggregated_digest = 0;
  std::optional<HoldoutMetrics> holdout;
  double local_training_ms = 0.0;  // wall clock; excluded from reproducibility diffs
  double aggregation_ms = 0.0;

  nlohmann::json to_json(bool include_wall_clock = true) const {
    nlohmann::json j;
    j["round"] = round;
    j["clients"] = nlohmann::json::array();
    for (const auto& c : clients)
      j["clients"].push_back({{"id", c.client_id},
                              {"samples", c.sample_count},
                              {"digest", digest_hex(c.update_digest)}});
    j["aggregated_digest"] = digest_hex(aggregated_digest);
    if (holdout)
      j["holdout"] = {{"loss", holdout->loss},
                      {"iou", holdout->iou},
                      {"mse", holdout->mse},
                      {"ssim", holdout->ssim}};
    if (include_wall_clock)
      j["wall_ms"] = {{"local_training", local_training_ms}, {"aggregation", aggregation_ms}};
    return j;
  }
};

struct ClientState {
  std::string client_id;
  ClientDataset dataset;
  ModelWeights local_weights;  // last returned update
  uint64_t seed = 0;           // per-client stream root
  std::vector<std::tuple<int, uint64_t, uint64_t>> update_log;  // (round, before, after digests)
};

// Observes the (before, after) weight pair each client emits per round; this
// is the exact surface a curious server can snoop on.
using SnapshotSink = std::function<void(int round, const ClientState& client,
                                        const ModelWeights& before, const ModelWeights& after,
                                        double learning_rate)>;

inline std::vector<ClientState> make_clients(const std::vector<ClientDataset>& datasets,
                                             uint64_t seed) {
  std::vector<ClientState> out;
  for (size_t i = 0; i < datasets.size(); ++i) {
    ClientState c;
    c.client_id = datasets[i].owner.empty() ? "client_" + std::to_string(i) : datasets[i].owner;
    c.dataset = datasets[i];
    c.seed = mix_seed(seed, "client", i);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local training
// ---------------------------------------------------------------------------

namespace detail {

inline ModelWeights sgd_epochs(const ModelSpec& spec, ModelWeights w, const ClientDataset& data,
                               const TrainConfig& cfg, Rng& rng) {
  const int64_t n = static_cast<int64_t>(data.samples.size());
  std::vector<Tensor> velocity;
  if (cfg.optimizer == TrainConfig::Optimizer::sgd_momentum)
    for (const auto& [name, t] : w.entries) velocity.push_back(Tensor::zeros(t.shape()));

  std::vector<SemSample> batch;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto perm = rng.permutation(n);
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      batch.clear();
      for (int64_t i = start; i < std::min<int64_t>(n, start + cfg.batch_size); ++i)
        batch.push_back(data.samples[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
      const GradientEstimate g = compute_gradients(w, batch);
      if (cfg.optimizer == TrainConfig::Optimizer::sgd_momentum) {
        for (size_t e = 0; e < w.entries.size(); ++e) {
          velocity[e].scale(cfg.momentum);
          velocity[e].add_scaled(g.entries[e].second, 1.0);
          w.entries[e].second.add_scaled(velocity[e], -cfg.learning_rate);
        }
      } else {
        for (size_t e = 0; e < w.entries.size(); ++e)
          w.entries[e].second.add_scaled(g.entries[e].second, -cfg.learning_rate);
      }
    }
  }
  return w;
}

// Pure part of a client round: no state mutation, safe to run in parallel.
inline ModelWeights client_train(const ClientState& state, const ModelWeights& global,
                                 const TrainConfig& cfg, int round) {
  cfg.validate();
  if (state.dataset.samples.empty())
    throw std::invalid_argument("local_update: client " + state.client_id + " has no data");
  if (!state.local_weights.entries.empty()) require_compatible(state.local_weights, global, "local_update");
  if (cfg.attack_compatible &&
      cfg.batch_size < static_cast<int>(state.dataset.samples.size()))
    throw ConfigError("local_update: attack_compatible requires a full-batch update (batch_size >= " +
                      std::to_string(state.dataset.samples.size()) + ")");
  const ModelSpec spec = ModelSpec::from_tag(global.model_tag);
  Rng rng(mix_seed(state.seed, "round", static_cast<uint64_t>(round)));
  ModelWeights after = sgd_epochs(spec, global, state.dataset, cfg, rng);
  after.version = round;
  return after;
}

}  // namespace detail

inline ModelWeights local_update(ClientState& state, const ModelWeights& global,
                                 const TrainConfig& cfg, int round,
                                 const SnapshotSink& sink = {}) {
  ModelWeights after = detail::client_train(state, global, cfg, round);
  state.update_log.emplace_back(round, weights_digest(global), weights_digest(after));
  state.local_weights = after;
  if (sink) sink(round, state, global, after, cfg.learning_rate);
  return after;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

// Sample-count-weighted elementwise mean, accumulated in fixed ascending
// order. A single update is returned verbatim so a one-client federation is
// bit-identical to its centralized twin.
inline ModelWeights fedavg_aggregate(const std::vector<std::pair<ModelWeights, int64_t>>& updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg_aggregate: no updates");
  for (const auto& [w, count] : updates)
    if (count <= 0) throw std::invalid_argument("fedavg_aggregate: nonpositive sample count");
  if (updates.size() == 1) return updates[0].first;

  ModelWeights out = updates[0].first;
  double total = 0.0;
  for (const auto& [w, count] : updates) total += static_cast<double>(count);
  for (size_t e = 0; e < out.entries.size(); ++e) {
    Tensor& acc = out.entries[e].second;
    acc.scale(static_cast<double>(updates[0].second));
    for (size_t u = 1; u < updates.size(); ++u) {
      require_compatible(updates[0].first, updates[u].first, "fedavg_aggregate");
      acc.add_scaled(updates[u].first.entries[e].second, static_cast<double>(updates[u].second));
    }
    acc.scale(1.0 / total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline HoldoutMetrics evaluate_model(const ModelSpec& spec, const ModelWeights& w,
                                     const ClientDataset& holdout) {
  HoldoutMetrics m;
  auto params = params_as_leaves(w, false);
  for (const auto& s : holdout.samples) {
    auto g = assemble_forward(spec, params, ag::constant(s.image));
    const Tensor& pred = g.output->value;
    const Tensor truth01 = s.mask.to_unit_tensor();
    m.loss += segmentation_loss(pred, truth01);
    m.iou += iou(pred, s.mask);
    m.mse += mse_norm(pred, truth01);
    m.ssim += ssim(pred, truth01);
  }
  const double inv = 1.0 / static_cast<double>(holdout.samples.size());
  m.loss *= inv;
  m.iou *= inv;
  m.mse *= inv;
  m.ssim *= inv;
  return m;
}

// ---------------------------------------------------------------------------
// Protocol loops
// ---------------------------------------------------------------------------

struct TrainResult {
  ModelWeights weights;
  std::vector<RoundRecord> rounds;
};

inline TrainResult run_federated(std::vector<ClientState>& clients, const ModelSpec& spec,
                                 const TrainConfig& cfg, const ClientDataset& holdout,
                                 const SnapshotSink& sink = {}) {
  cfg.validate();
  spec.validate();
  if (clients.empty()) throw std::invalid_argument("run_federated: no clients");
  std::set<std::string> ids;
  for (const auto& c : clients) {
    for (const auto& s : c.dataset.samples)
      if (!ids.insert(s.id).second)
        throw std::invalid_argument("run_federated: client datasets overlap at sample " + s.id);
  }

  TrainResult result;
  result.weights = build_model(spec, mix_seed(cfg.seed, "init"));

  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  using Clock = std::chrono::steady_clock;

  for (int round = 1; round <= cfg.rounds; ++round) {
    // participant selection (ascending order keeps aggregation order fixed)
    std::vector<size_t> chosen;
    if (cfg.participation_fraction >= 1.0) {
      for (size_t i = 0; i < clients.size(); ++i) chosen.push_back(i);
    } else {
      const size_t k = std::max<size_t>(
          1, static_cast<size_t>(std::llround(cfg.participation_fraction *
                                              static_cast<double>(clients.size()))));
      Rng prng(mix_seed(cfg.seed, "participation", static_cast<uint64_t>(round)));
      std::vector<int64_t> perm = prng.permutation(static_cast<int64_t>(clients.size()));
      perm.resize(k);
      std::sort(perm.begin(), perm.end());
      for (int64_t i : perm) chosen.push_back(static_cast<size_t>(i));
    }

    const auto t0 = Clock::now();
    std::vector<ModelWeights> updates(chosen.size());
    if (chosen.size() > 1 && workers > 1) {
      std::vector<std::future<ModelWeights>> futs;
      for (size_t i : chosen)
        futs.push_back(std::async(std::launch::async, [&, i] {
          return detail::client_train(clients[i], result.weights, cfg, round);
        }));
      for (size_t u = 0; u < futs.size(); ++u) updates[u] = futs[u].get();
    } else {
      for (size_t u = 0; u < chosen.size(); ++u)
        updates[u] = detail::client_train(clients[chosen[u]], result.weights, cfg, round);
    }
    const auto t1 = Clock::now();

    RoundRecord rec;
    rec.round = round;
    std::vector<std::pair<ModelWeights, int64_t>> weighted;
    const uint64_t before_digest = weights_digest(result.weights);
    for (size_t u = 0; u < chosen.size(); ++u) {
      ClientState& c = clients[chosen[u]];
      const uint64_t after_digest = weights_digest(updates[u]);
      c.update_log.emplace_back(round, before_digest, after_digest);
      if (sink) sink(round, c, result.weights, updates[u], cfg.learning_rate);
      rec.clients.push_back(
          {c.client_id, static_cast<int64_t>(c.dataset.samples.size()), after_digest});
      weighted.emplace_back(std::move(updates[u]),
                            static_cast<int64_t>(c.dataset.samples.size()));
    }
    for (size_t u = 0; u < chosen.size(); ++u)
      clients[chosen[u]].local_weights = weighted[u].first;

    result.weights = fedavg_aggregate(weighted);
    result.weights.version = round;
    const auto t2 = Clock::now();

    rec.aggregated_digest = weights_digest(result.weights);
    if (!holdout.samples.empty()) rec.holdout = evaluate_model(spec, result.weights, holdout);
    rec.local_training_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    rec.aggregation_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    result.rounds.push_back(std::move(rec));
  }
  return result;
}

// Centralized baseline: the same round loop over one synthetic client whose
// dataset is the whole training subset. One round spans local_epochs epochs.
inline TrainResult train_centralized(const ClientDataset& data, const ModelSpec& spec,
                                     const TrainConfig& cfg,
                                     const ClientDataset* holdout = nullptr,
                                     const SnapshotSink& sink = {}) {
  if (data.samples.empty()) throw std::invalid_argument("train_centralized: empty dataset");
  std::vector<ClientState> single = make_clients({data}, cfg.seed);
  single[0].client_id = data.owner.empty() ? "centralized" : data.owner;
  ClientDataset empty;
  return run_federated(single, spec, cfg, holdout ? *holdout : empty, sink);
}

}  // namespace fedsem
