#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedsem/fed.hpp"

using namespace fedsem;

namespace {

ModelWeights scalar_weights(double v, const std::string& tag = "toy:2x2") {
  ModelWeights w;
  w.model_tag = tag;
  w.entries.emplace_back("w", Tensor::full({1}, v));
  return w;
}

struct SmallWorld {
  ModelSpec spec;
  SplitResult splits;

  explicit SmallWorld(uint64_t seed, int64_t img = 16, int64_t per_subset = 4) {
    spec.arch = Architecture::unet;
    spec.depth = 2;
    spec.base_channels = 2;
    spec.height = spec.width = img;

    CorpusConfig cc;
    cc.count = per_subset * 3 + 2;
    cc.height = img;
    cc.width = img;
    cc.seed = seed;
    SplitManifest man;
    man.parts.push_back({"A", per_subset, SubsetRole::train});
    man.parts.push_back({"B", per_subset, SubsetRole::train});
    man.parts.push_back({"C", per_subset, SubsetRole::train});
    man.parts.push_back({"J", 2, SubsetRole::holdout});
    splits = build_experiment_splits(generate_corpus(cc), man);
  }
};

double max_rel_entry_diff(const NamedTensors& a, const NamedTensors& b) {
  double worst = 0.0;
  for (size_t e = 0; e < a.size(); ++e)
    for (int64_t i = 0; i < a[e].second.numel(); ++i) {
      const double denom = std::max({std::fabs(a[e].second[i]), std::fabs(b[e].second[i]), 1e-12});
      worst = std::max(worst, std::fabs(a[e].second[i] - b[e].second[i]) / denom);
    }
  return worst;
}

// per-tensor relative error in the Euclidean norm
double max_tensor_rel_err(const NamedTensors& a, const NamedTensors& b) {
  double worst = 0.0;
  for (size_t e = 0; e < a.size(); ++e) {
    Tensor d = a[e].second;
    d.add_scaled(b[e].second, -1.0);
    const double denom = std::max(std::sqrt(b[e].second.squared_norm()), 1e-30);
    worst = std::max(worst, std::sqrt(d.squared_norm()) / denom);
  }
  return worst;
}

bool same_values(const NamedTensors& a, const NamedTensors& b) {
  for (size_t e = 0; e < a.size(); ++e)
    if (a[e].second.vec() != b[e].second.vec()) return false;
  return true;
}

}  // namespace

TEST_CASE("fedavg_aggregate arithmetic") {
  // equal counts: plain mean
  const auto mean = fedavg_aggregate({{scalar_weights(0.0), 10}, {scalar_weights(2.0), 10}});
  REQUIRE(mean.entries[0].second[0] == Catch::Approx(1.0));

  // counts (10, 30) on scalars 0 and 4 -> 3.0
  const auto weighted = fedavg_aggregate({{scalar_weights(0.0), 10}, {scalar_weights(4.0), 30}});
  REQUIRE(weighted.entries[0].second[0] == Catch::Approx(3.0));

  // single update comes back bit-exact
  ModelWeights w = scalar_weights(0.3356799731);
  REQUIRE(weights_digest(fedavg_aggregate({{w, 7}})) == weights_digest(w));

  REQUIRE_THROWS_AS(fedavg_aggregate({}), std::invalid_argument);
  REQUIRE_THROWS_AS(fedavg_aggregate({{w, 0}}), std::invalid_argument);
  ModelWeights other = scalar_weights(1.0, "toy:4x4");
  REQUIRE_THROWS_AS(fedavg_aggregate({{w, 1}, {other, 1}}), std::invalid_argument);
}

TEST_CASE("aggregating k copies returns the same weights") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 2;
  spec.height = spec.width = 16;
  const ModelWeights w = build_model(spec, 3);
  for (int k : {2, 3, 5}) {
    std::vector<std::pair<ModelWeights, int64_t>> ups;
    for (int i = 0; i < k; ++i) ups.push_back({w, 10});
    const ModelWeights agg = fedavg_aggregate(ups);
    REQUIRE(max_rel_entry_diff(agg.entries, w.entries) < 1e-12);
  }
}

TEST_CASE("aggregation is invariant to client order") {
  ModelSpec spec;
  spec.arch = Architecture::unet;
  spec.depth = 2;
  spec.base_channels = 2;
  spec.height = spec.width = 16;
  const ModelWeights a = build_model(spec, 1);
  const ModelWeights b = build_model(spec, 2);
  const ModelWeights c = build_model(spec, 3);
  const auto fwd = fedavg_aggregate({{a, 10}, {b, 20}, {c, 30}});
  const auto rev = fedavg_aggregate({{c, 30}, {b, 20}, {a, 10}});
  REQUIRE(max_rel_entry_diff(fwd.entries, rev.entries) < 1e-6);
}

TEST_CASE("attack-compatible local update is exactly one sgd step") {
  SmallWorld world(5);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;  // full batch
  cfg.rounds = 1;
  cfg.attack_compatible = true;
  cfg.seed = 9;

  auto clients = make_clients({world.splits.find("A")}, cfg.seed);
  const ModelWeights global = build_model(world.spec, 7);
  const ModelWeights after = local_update(clients[0], global, cfg, 1);

  const GradientEstimate g = compute_gradients(global, clients[0].dataset.samples);
  NamedTensors reconstructed;
  for (size_t e = 0; e < global.entries.size(); ++e) {
    Tensor t = global.entries[e].second;
    t.add_scaled(after.entries[e].second, -1.0);
    t.scale(1.0 / cfg.learning_rate);
    reconstructed.emplace_back(global.entries[e].first, std::move(t));
  }
  REQUIRE(max_tensor_rel_err(reconstructed, g.entries) < 1e-9);

  REQUIRE(clients[0].update_log.size() == 1);
  REQUIRE(std::get<1>(clients[0].update_log[0]) == weights_digest(global));
}

TEST_CASE("local update edge cases") {
  SmallWorld world(6);
  TrainConfig cfg;
  cfg.seed = 1;

  ClientState empty;
  empty.client_id = "empty";
  const ModelWeights global = build_model(world.spec, 1);
  REQUIRE_THROWS_AS(local_update(empty, global, cfg, 1), std::invalid_argument);

  // zero learning rate returns the broadcast weights bit-exactly
  auto clients = make_clients({world.splits.find("A")}, cfg.seed);
  TrainConfig frozen = cfg;
  frozen.learning_rate = 0.0;
  const ModelWeights after = local_update(clients[0], global, frozen, 1);
  REQUIRE(same_values(after.entries, global.entries));
  REQUIRE(after.version == 1);  // bookkeeping advances even for a null update

  TrainConfig bad = cfg;
  bad.attack_compatible = true;
  bad.optimizer = TrainConfig::Optimizer::sgd_momentum;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  TrainConfig partial = cfg;
  partial.attack_compatible = true;
  partial.batch_size = 2;  // dataset has 4 samples
  REQUIRE_THROWS_AS(local_update(clients[0], global, partial, 1), ConfigError);
}

TEST_CASE("one-client federation matches centralized training bit for bit") {
  SmallWorld world(7);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 2;
  cfg.rounds = 3;
  cfg.seed = 17;

  const ClientDataset holdout = world.splits.find("J");
  auto clients = make_clients({world.splits.find("A")}, cfg.seed);
  const TrainResult fl = run_federated(clients, world.spec, cfg, holdout);
  const TrainResult cl = train_centralized(world.splits.find("A"), world.spec, cfg, &holdout);

  REQUIRE(weights_digest(fl.weights) == weights_digest(cl.weights));
  REQUIRE(fl.rounds.size() == cl.rounds.size());
  for (size_t r = 0; r < fl.rounds.size(); ++r) {
    REQUIRE(fl.rounds[r].aggregated_digest == cl.rounds[r].aggregated_digest);
    REQUIRE(fl.rounds[r].holdout->iou == cl.rounds[r].holdout->iou);
    REQUIRE(fl.rounds[r].holdout->loss == cl.rounds[r].holdout->loss);
  }
}

TEST_CASE("federated runs are deterministic and logged") {
  SmallWorld world(8);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 2;
  cfg.rounds = 2;
  cfg.seed = 23;
  const ClientDataset holdout = world.splits.find("J");

  auto run_once = [&] {
    auto clients = make_clients(
        {world.splits.find("A"), world.splits.find("B"), world.splits.find("C")}, cfg.seed);
    return run_federated(clients, world.spec, cfg, holdout);
  };
  const TrainResult r1 = run_once();
  const TrainResult r2 = run_once();
  REQUIRE(weights_digest(r1.weights) == weights_digest(r2.weights));
  for (size_t r = 0; r < r1.rounds.size(); ++r) {
    REQUIRE(r1.rounds[r].to_json(false) == r2.rounds[r].to_json(false));
    REQUIRE(r1.rounds[r].clients.size() == 3);
    REQUIRE(r1.rounds[r].holdout.has_value());
  }
  // wall-clock fields exist in the full serialization
  REQUIRE(r1.rounds[0].to_json(true).contains("wall_ms"));
  REQUIRE_FALSE(r1.rounds[0].to_json(false).contains("wall_ms"));
}

TEST_CASE("identical clients aggregate to a single client's update") {
  SmallWorld world(9);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 4;
  cfg.rounds = 1;
  cfg.seed = 31;

  const ModelWeights global = build_model(world.spec, 5);
  const ClientDataset data = world.splits.find("A");
  std::vector<std::pair<ModelWeights, int64_t>> updates;
  ModelWeights first;
  for (int i = 0; i < 3; ++i) {
    ClientState c;
    c.client_id = "twin";
    c.dataset = data;
    c.seed = mix_seed(cfg.seed, "client", 0);  // same stream for all twins
    const ModelWeights u = local_update(c, global, cfg, 1);
    if (i == 0) first = u;
    updates.push_back({u, 4});
  }
  const ModelWeights agg = fedavg_aggregate(updates);
  REQUIRE(max_rel_entry_diff(agg.entries, first.entries) < 1e-12);
}

TEST_CASE("overlapping client datasets are rejected") {
  SmallWorld world(10);
  TrainConfig cfg;
  cfg.rounds = 1;
  cfg.seed = 1;
  auto clients = make_clients({world.splits.find("A"), world.splits.find("A")}, cfg.seed);
  ClientDataset holdout;
  REQUIRE_THROWS_AS(run_federated(clients, world.spec, cfg, holdout), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves the global model at initialization") {
  SmallWorld world(11);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.rounds = 2;
  cfg.seed = 3;
  auto clients = make_clients({world.splits.find("A")}, cfg.seed);
  ClientDataset holdout;
  const TrainResult r = run_federated(clients, world.spec, cfg, holdout);
  REQUIRE(same_values(r.weights.entries,
                      build_model(world.spec, mix_seed(cfg.seed, "init")).entries));
}

TEST_CASE("snapshot sink observes every before/after pair") {
  SmallWorld world(12);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 4;
  cfg.rounds = 2;
  cfg.seed = 41;
  auto clients = make_clients({world.splits.find("A"), world.splits.find("B")}, cfg.seed);
  ClientDataset holdout;

  int calls = 0;
  SnapshotSink sink = [&](int round, const ClientState& c, const ModelWeights& before,
                          const ModelWeights& after, double lr) {
    ++calls;
    REQUIRE(lr == cfg.learning_rate);
    REQUIRE(before.model_tag == after.model_tag);
    REQUIRE(round >= 1);
    REQUIRE(round <= 2);
    REQUIRE((c.client_id == "client_0" || c.client_id == "client_1"));
  };
  run_federated(clients, world.spec, cfg, holdout, sink);
  REQUIRE(calls == 4);
}
