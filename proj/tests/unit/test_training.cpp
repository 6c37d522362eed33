#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gate/data.hpp"
#include "gate/metrics.hpp"
#include "gate/training.hpp"
#include "gradcheck.hpp"

using namespace gate;
using train::TrainConfig;

namespace {

train::LabeledSet labeled(const data::Dataset& d, std::size_t begin, std::size_t end) {
  train::LabeledSet s;
  for (std::size_t i = begin; i < end; ++i) {
    s.graphs.push_back(chem::load_molecule(d.records[i].smiles));
    s.labels.push_back(d.records[i].value);
  }
  return s;
}

struct SmallPair {
  train::TaskData target;
  train::TaskData source;
};

const SmallPair& small_pair() {
  static const SmallPair p = [] {
    data::SynthConfig sc;
    sc.n_target = 60;
    sc.n_source = 120;
    sc.seed = 3;
    auto [t, s] = data::synth_pair(sc);
    auto tn = data::normalize(t).first;
    auto sn = data::normalize(s).first;
    return SmallPair{{labeled(tn, 0, 48), labeled(tn, 48, 60)}, {labeled(sn, 0, 100), labeled(sn, 100, 120)}};
  }();
  return p;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 16;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.perturb.count = 2;
  c.seed = 5;
  return c;
}

ad::Parameter scalar_param(double v) {
  ad::Parameter p("theta", ad::Matrix::Constant(1, 1, v));
  p.zero_grad();
  return p;
}

}  // namespace

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
  ad::Parameter p = scalar_param(0.7);
  p.touched = true;
  train::AdamWState s;
  s.config.weight_decay = 0.0;
  ad::Parameter* ps[] = {&p};
  train::adamw_step(ps, s, 0.1);
  EXPECT_EQ(p.value(0, 0), 0.7);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ad::Parameter p = scalar_param(0.7);
  p.grad(0, 0) = 1.0;
  p.touched = true;
  train::AdamWState s;
  s.config.weight_decay = 0.0;
  ad::Parameter* ps[] = {&p};
  train::adamw_step(ps, s, 0.01);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.value(0, 0) - 0.7, -0.01 / (1.0 + 1e-8), 1e-15);
}

TEST(AdamW, DecayAloneIsExponential) {
  ad::Parameter p = scalar_param(2.0);
  p.touched = true;
  train::AdamWState s;
  s.config.weight_decay = 0.01;
  ad::Parameter* ps[] = {&p};
  double expect = 2.0;
  for (int k = 0; k < 5; ++k) {
    train::adamw_step(ps, s, 0.1);
    expect *= 1.0 - 0.1 * 0.01;
  }
  EXPECT_NEAR(p.value(0, 0), expect, 1e-15);
}

TEST(AdamW, UntouchedParametersAreSkipped) {
  ad::Parameter used = scalar_param(1.0), idle = scalar_param(1.0);
  used.grad(0, 0) = 0.5;
  used.touched = true;
  train::AdamWState s;
  ad::Parameter* ps[] = {&used, &idle};
  train::adamw_step(ps, s, 0.1);
  EXPECT_NE(used.value(0, 0), 1.0);
  EXPECT_EQ(idle.value(0, 0), 1.0);
  EXPECT_EQ(s.steps[0], 1u);
  EXPECT_EQ(s.steps[1], 0u);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  ad::Parameter p = scalar_param(1.0);
  p.grad(0, 0) = NAN;
  p.touched = true;
  train::AdamWState s;
  ad::Parameter* ps[] = {&p};
  try {
    train::adamw_step(ps, s, 0.1);
    FAIL();
  } catch (const train::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
  }
}

TEST(EarlyStopping, DecreasingMetricNeverStops) {
  train::EarlyStopper s(3);
  for (std::size_t e = 1; e <= 100; ++e)
    EXPECT_EQ(s.observe(e, 1.0 / static_cast<double>(e)), train::Decision::Continue);
  EXPECT_EQ(s.best_epoch(), 100u);
}

TEST(EarlyStopping, ConstantMetricStopsAfterPatiencePlusOne) {
  const std::size_t patience = 4;
  train::EarlyStopper s(patience);
  std::size_t epoch = 0;
  while (s.observe(++epoch, 0.5) == train::Decision::Continue) ASSERT_LT(epoch, 100u);
  EXPECT_EQ(epoch, patience + 1);
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(EarlyStopping, BestIsNonIncreasing) {
  train::EarlyStopper s(50);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double prev = INFINITY;
  for (std::size_t e = 1; e <= 40; ++e) {
    s.observe(e, u(rng));
    EXPECT_LE(s.best(), prev);
    prev = s.best();
  }
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-5);
  EXPECT_EQ(c.batch_size, 512u);
  EXPECT_EQ(c.max_epochs, 600u);
  EXPECT_EQ(c.patience, 50u);
  EXPECT_EQ(c.perturb.count, 10u);
  EXPECT_DOUBLE_EQ(c.val_fraction, 0.1);
  EXPECT_DOUBLE_EQ(c.adamw.weight_decay, 0.01);
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), nn::ConfigError);
  c = TrainConfig{};
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), nn::ConfigError);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = quick_config(7);
  c.weights = {0.5, 1, 0, 2};
  c.distance = loss::DistanceMode::Scalar;
  c.epoch_batches = 3;
  nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
}

TEST(GateLosses, ZeroWeightsReduceToRegression) {
  nn::Model m(nn::ModelKind::Gate, nn::NetworkConfig::tiny(), 1);
  const auto& set = small_pair().target.train;
  std::vector<const chem::MolGraph*> g{&set.graphs[0], &set.graphs[1], &set.graphs[2]};
  nn::GraphBatch b = nn::GraphBatch::from(g);
  TrainConfig c = quick_config(1);
  c.weights = {0, 0, 0, 0};
  ad::Tape t;
  std::mt19937_64 rng(0);
  auto bundle = train::gate_losses(t, m, 0, b, std::span<const double>(set.labels.data(), 3), c, rng, false);
  EXPECT_EQ(bundle.total.item(), bundle.reg.item());
  EXPECT_FALSE(bundle.map.valid());
  EXPECT_FALSE(bundle.dist.valid());
}

TEST(GateLosses, TotalMatchesFiniteDifferences) {
  nn::Model m(nn::ModelKind::Gate, nn::NetworkConfig::tiny(8, 4), 2);
  const auto& set = small_pair().target.train;
  std::vector<const chem::MolGraph*> g{&set.graphs[0], &set.graphs[1], &set.graphs[2]};
  nn::GraphBatch b = nn::GraphBatch::from(g);
  TrainConfig c = quick_config(1);
  c.perturb.count = 2;
  c.perturb.sigma = 0.1;
  std::mt19937_64 jitter(4);
  check::jitter_biases(m.parameters(), jitter);
  for (std::size_t task : {0u, 1u}) {
    const double err = check::check_params(m.parameters(), [&](ad::Tape& t) {
      std::mt19937_64 rng(9);
      return train::gate_losses(t, m, task, b, std::span<const double>(set.labels.data(), 3), c, rng, true).total;
    });
    EXPECT_LT(err, 1e-4) << "task " << task;
  }
}

TEST(GateLosses, EveryNetworkReceivesGradient) {
  nn::Model m(nn::ModelKind::Gate, nn::NetworkConfig::quartered(), 3);
  const auto& set = small_pair().target.train;
  std::vector<const chem::MolGraph*> g;
  for (std::size_t i = 0; i < 16; ++i) g.push_back(&set.graphs[i]);
  nn::GraphBatch b = nn::GraphBatch::from(g);
  TrainConfig c = quick_config(1);
  std::vector<double> touched_max(m.parameters().size(), 0.0);
  for (std::size_t task : {0u, 1u}) {
    m.zero_grad();
    ad::Tape t;
    std::mt19937_64 rng(1);
    t.backward(train::gate_losses(t, m, task, b, std::span<const double>(set.labels.data(), 16), c, rng, true).total);
    auto ps = m.parameters();
    for (std::size_t k = 0; k < ps.size(); ++k)
      touched_max[k] = std::max(touched_max[k], ps[k]->grad.cwiseAbs().maxCoeff());
  }
  auto ps = m.parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_GT(touched_max[k], 0.0) << ps[k]->name;
}

TEST(TrainStl, FitsConstantLabels) {
  train::TaskData d = small_pair().target;
  for (auto& y : d.train.labels) y = 0.8;
  for (auto& y : d.val.labels) y = 0.8;
  TrainConfig c = quick_config(60);
  c.learning_rate = 1e-2;
  auto r = train::train_stl(d, c, nn::NetworkConfig::tiny());
  EXPECT_LT(train::rmse_on(r.model, 0, d.train), 0.05);
}

TEST(TrainMtl, DuplicatedTaskMatchesStl) {
  data::SynthConfig sc;
  sc.n_target = 160;
  sc.n_source = 10;
  sc.seed = 8;
  auto tn = data::normalize(data::synth_pair(sc).first).first;
  const train::TaskData d{labeled(tn, 0, 110), labeled(tn, 110, 160)};
  // Both trained to convergence with full passes; averaged over seeds.
  double stl = 0.0, mtl = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig c = quick_config(250);
    c.learning_rate = 1e-3;
    c.seed = seed;
    stl += train::train_stl(d, c, nn::NetworkConfig::quartered()).best_val_rmse / 5.0;
    mtl += train::train_mtl(d, d, c, nn::NetworkConfig::quartered()).best_val_rmse / 5.0;
  }
  EXPECT_NEAR(mtl, stl, 0.1 * stl);
}

TEST(TrainGate, DeterministicHistory) {
  TrainConfig c = quick_config(3);
  const auto& p = small_pair();
  auto a = train::train_gate(p.target, p.source, c, nn::NetworkConfig::tiny());
  auto b = train::train_gate(p.target, p.source, c, nn::NetworkConfig::tiny());
  ASSERT_EQ(a.history.size(), 3u);
  ASSERT_EQ(b.history.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e)
    EXPECT_EQ(train::to_ndjson_records(a.history[e]).dump(), train::to_ndjson_records(b.history[e]).dump());
  EXPECT_EQ(nn::serialize_checkpoint(a.model), nn::serialize_checkpoint(b.model));
}

TEST(TrainGate, ImprovesOnCorrelatedPair) {
  TrainConfig c = quick_config(25);
  c.validation_losses = false;
  const auto& p = small_pair();
  auto r = train::train_gate(p.target, p.source, c, nn::NetworkConfig::quartered());
  ASSERT_EQ(r.history.size(), 25u);
  EXPECT_LE(r.best_val_rmse, r.history.front().tasks[0].val_rmse);
  EXPECT_TRUE(std::isnan(r.history.back().tasks[1].val_rmse));
  // The returned model is the best epoch's snapshot.
  EXPECT_DOUBLE_EQ(train::rmse_on(r.model, 0, p.target.val), r.best_val_rmse);
}

TEST(TrainGate, RecordsEveryLossComponent) {
  TrainConfig c = quick_config(2);
  const auto& p = small_pair();
  auto r = train::train_gate(p.target, p.source, c, nn::NetworkConfig::tiny());
  for (const auto& rec : r.history)
    for (const auto& task : rec.tasks) {
      EXPECT_GT(task.train.autoenc, 0.0);
      EXPECT_GT(task.train.map, 0.0);
      EXPECT_GT(task.train.cons, 0.0);
      EXPECT_GT(task.train.dist, 0.0);
      EXPECT_GT(task.val.map, 0.0);
      EXPECT_TRUE(std::isfinite(task.val_rmse));
    }
}

TEST(TrainGate, EarlyStopHistoryHasNoGaps) {
  TrainConfig c = quick_config(40);
  c.patience = 2;
  c.learning_rate = 5e-2;
  const auto& p = small_pair();
  auto r = train::train_stl(p.target, c, nn::NetworkConfig::tiny());
  for (std::size_t e = 0; e < r.history.size(); ++e) EXPECT_EQ(r.history[e].epoch, e + 1);
  EXPECT_LE(r.history.size(), r.best_epoch + c.patience);
}

TEST(TrainGate, RejectsEmptyData) {
  train::TaskData empty;
  EXPECT_THROW(train::train_stl(empty, quick_config(1), nn::NetworkConfig::tiny()), std::exception);
}
