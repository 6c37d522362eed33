#include "gate/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "gate/metrics.hpp"

namespace gate::train {

using nlohmann::json;

// ---- AdamW ------------------------------------------------------------------

void adamw_step(std::span<ad::Parameter* const> params, AdamWState& state, double lr) {
  const AdamWConfig& c = state.config;
  if (state.first.size() != params.size()) {
    state.first.clear();
    state.second.clear();
    state.steps.assign(params.size(), 0);
    for (const auto* p : params) {
      state.first.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ad::Parameter& p = *params[k];
    if (p.touched && !p.grad.allFinite())
      throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
  }
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    if (!p.touched) continue;
    ad::Matrix& m = state.first[k];
    ad::Matrix& v = state.second[k];
    const auto t = static_cast<double>(++state.steps[k]);
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    p.value.array() -= lr * c.weight_decay * p.value.array();
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

Decision EarlyStopper::observe(std::size_t epoch, double metric) {
  improved_ = metric < best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch;
    since_ = 0;
    return Decision::Continue;
  }
  ++since_;
  return since_ >= patience_ ? Decision::Stop : Decision::Continue;
}

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw nn::ConfigError("learning rate must be positive");
  if (batch_size == 0) throw nn::ConfigError("batch size must be positive");
  if (max_epochs == 0) throw nn::ConfigError("max epochs must be positive");
  if (patience == 0) throw nn::ConfigError("patience must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw nn::ConfigError("validation fraction must lie in (0, 1)");
  perturb.validate();
  weights.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"val_fraction", c.val_fraction},
           {"seed", c.seed},
           {"perturb", c.perturb},
           {"weights", c.weights},
           {"consistency", loss::to_string(c.consistency)},
           {"distance", loss::to_string(c.distance)},
           {"adamw",
            {{"beta1", c.adamw.beta1},
             {"beta2", c.adamw.beta2},
             {"eps", c.adamw.eps},
             {"weight_decay", c.adamw.weight_decay}}},
           {"validation_losses", c.validation_losses},
           {"epoch_batches", c.epoch_batches}};
}

void from_json(const json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.seed = j.value("seed", c.seed);
  if (j.contains("perturb")) c.perturb = j["perturb"].get<nn::PerturbConfig>();
  if (j.contains("weights")) c.weights = j["weights"].get<loss::LossWeights>();
  if (j.contains("consistency"))
    c.consistency = loss::consistency_mode_from_string(j["consistency"]);
  if (j.contains("distance")) c.distance = loss::distance_mode_from_string(j["distance"]);
  if (j.contains("adamw")) {
    const json& a = j["adamw"];
    c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
    c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
    c.adamw.eps = a.value("eps", c.adamw.eps);
    c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
  }
  c.validation_losses = j.value("validation_losses", c.validation_losses);
  c.epoch_batches = j.value("epoch_batches", c.epoch_batches);
}

json to_ndjson_records(const EpochRecord& r) {
  json out = json::array();
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const TaskEpoch& te = r.tasks[t];
    out.push_back({{"epoch", r.epoch},
                   {"task", t == 0 ? "target" : "source"},
                   {"train", te.train},
                   {"val", te.val},
                   {"train_rmse", te.train_rmse},
                   {"val_rmse", te.val_rmse}});
  }
  return out;
}

// ---- helpers ----------------------------------------------------------------

namespace {

nn::GraphBatch make_batch(const LabeledSet& set, std::span<const std::size_t> idx) {
  std::vector<const chem::MolGraph*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&set.graphs[i]);
  return nn::GraphBatch::from(ptrs);
}

ad::Matrix label_column(const LabeledSet& set, std::span<const std::size_t> idx) {
  ad::Matrix y(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t k = 0; k < idx.size(); ++k) y(static_cast<Eigen::Index>(k), 0) = set.labels[idx[k]];
  return y;
}

void check_task(const TaskData& d, const char* name) {
  if (d.train.size() == 0) throw TrainingError(std::string(name) + ": empty training set");
  if (d.val.size() == 0) throw TrainingError(std::string(name) + ": empty validation set");
  if (d.train.graphs.size() != d.train.labels.size() || d.val.graphs.size() != d.val.labels.size())
    throw TrainingError(std::string(name) + ": graphs and labels differ in length");
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch,
                                                       std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
  return out;
}

// Shuffled index stream of one task. A full epoch is a fresh permutation; a
// capped epoch continues where the previous one stopped.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch) : n_(n), batch_(batch) {}

  std::vector<std::vector<std::size_t>> epoch(std::size_t cap, std::mt19937_64& rng) {
    if (cap == 0) return shuffled_batches(n_, batch_, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t k = 0; k < cap; ++k) {
      if (cursor_ == order_.size()) {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
      }
      const std::size_t end = std::min(order_.size(), cursor_ + batch_);
      out.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
      cursor_ = end;
    }
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

std::size_t clamp_batch(std::size_t batch, std::size_t n, const char* name) {
  if (batch > n) {
    std::cerr << "warning: batch size " << batch << " exceeds " << name << " training set ("
              << n << "); clamped\n";
    return n;
  }
  return batch;
}

void check_finite(const loss::LossBundle& b) {
  if (!std::isfinite(b.total.item())) throw TrainingError("training diverged: loss is not finite");
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

class Loop {
 public:
  Loop(nn::Model model, const TrainConfig& cfg, const EpochObserver& observer)
      : model_(std::move(model)), cfg_(cfg), observer_(observer), rng_(cfg.seed),
        stopper_(cfg.patience) {
    adam_.config = cfg.adamw;
  }

  void step(const loss::LossBundle& losses, ad::Tape& tape) {
    check_finite(losses);
    tape.backward(losses.total);
    auto params = model_.parameters();
    adamw_step(params, adam_, cfg_.learning_rate);
  }

  nn::Model& model() { return model_; }
  std::mt19937_64& rng() { return rng_; }

  // Returns true when training should stop.
  bool finish_epoch(EpochRecord rec, TrainResult& result) {
    const double metric = rec.tasks.at(0).val_rmse;
    if (!std::isfinite(metric)) throw TrainingError("validation RMSE is not finite");
    const Decision d = stopper_.observe(rec.epoch, metric);
    if (stopper_.improved()) {
      result.model = model_;
      result.best_epoch = rec.epoch;
      result.best_val_rmse = metric;
    }
    if (observer_) observer_(rec);
    result.history.push_back(std::move(rec));
    return d == Decision::Stop;
  }

 private:
  nn::Model model_;
  TrainConfig cfg_;
  const EpochObserver& observer_;
  std::mt19937_64 rng_;
  AdamWState adam_;
  EarlyStopper stopper_;
};

loss::LossValues gate_val_losses(nn::Model& model, std::size_t t, const LabeledSet& set,
                                 const TrainConfig& cfg) {
  ad::Tape tape;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto idx = all_indices(set.size());
  const auto batch = make_batch(set, idx);
  const auto y = label_column(set, idx);
  return loss::values_of(
      gate_losses(tape, model, t, batch, std::span<const double>(y.data(), y.size()), cfg, rng, false));
}

loss::LossValues reg_val_loss(nn::Model& model, std::size_t t, const LabeledSet& set) {
  const auto idx = all_indices(set.size());
  const auto pred = model.predict_batch(t, make_batch(set, idx));
  const double l = eval::mse(set.labels, pred);
  loss::LossValues v;
  v.reg = v.total = l;
  return v;
}

}  // namespace

double rmse_on(nn::Model& model, std::size_t task, const LabeledSet& set) {
  const auto idx = all_indices(set.size());
  const auto pred = model.predict_batch(task, make_batch(set, idx));
  return eval::rmse(set.labels, pred);
}

loss::LossBundle gate_losses(ad::Tape& tape, nn::Model& model, std::size_t t,
                             const nn::GraphBatch& batch, std::span<const double> labels,
                             const TrainConfig& cfg, std::mt19937_64& rng, bool training) {
  if (model.kind() != nn::ModelKind::Gate) throw TrainingError("gate_losses requires a GATE model");
  const std::size_t s = 1 - t;
  const std::size_t n = batch.num_graphs;
  if (labels.size() != n) throw ad::DimensionError("gate_losses: label count mismatch");
  const loss::LossWeights& w = cfg.weights;
  const bool cross = w.beta != 0.0 || w.gamma != 0.0 || w.delta != 0.0;
  const bool perturbed = w.gamma != 0.0 || w.delta != 0.0;

  ad::Matrix ycol(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) ycol(static_cast<Eigen::Index>(i), 0) = labels[i];
  ad::Value y = tape.constant(std::move(ycol));

  nn::GraphRepr a = model.embed(tape, batch);
  nn::StackedRepr stacked;
  const nn::GraphBatch* enc_batch = &batch;
  const nn::GraphRepr* enc_in = &a;
  std::size_t m_count = 0;
  if (perturbed) {
    stacked = nn::perturb_stacked(a, batch, cfg.perturb, rng);
    enc_batch = &stacked.batch;
    enc_in = &stacked.repr;
    m_count = cfg.perturb.count;
  }

  loss::LossBundle b;
  ad::Value z_all = model.encode(tape, t, *enc_batch, *enc_in, rng, training);
  ad::Value z_t = perturbed ? ad::slice_rows(z_all, 0, n) : z_all;
  b.reg = loss::loss_reg(y, model.predict(tape, t, z_t, rng, training));

  const bool need_transfer = cross || w.alpha != 0.0;
  ad::Value m_all_t, m_t;
  if (need_transfer) {
    m_all_t = model.transfer(tape, t, z_all, rng, training);
    m_t = perturbed ? ad::slice_rows(m_all_t, 0, n) : m_all_t;
  }
  if (w.alpha != 0.0) b.autoenc = loss::loss_auto(z_t, model.inverse_transfer(tape, t, m_t, rng, training));

  if (cross) {
    ad::Value z_all_s = model.encode(tape, s, *enc_batch, *enc_in, rng, training);
    ad::Value m_all_s = model.transfer(tape, s, z_all_s, rng, training);
    ad::Value m_s = perturbed ? ad::slice_rows(m_all_s, 0, n) : m_all_s;
    if (w.beta != 0.0) {
      ad::Value y_cross =
          model.predict(tape, t, model.inverse_transfer(tape, t, m_s, rng, training), rng, training);
      b.map = loss::loss_map(y, y_cross);
    }
    if (perturbed) {
      loss::PerturbedSet bar_t{ad::slice_rows(m_all_t, n, n * m_count), m_count};
      loss::PerturbedSet bar_s{ad::slice_rows(m_all_s, n, n * m_count), m_count};
      if (w.gamma != 0.0) b.cons = loss::loss_cons(m_t, m_s, bar_t, bar_s, cfg.consistency);
      if (w.delta != 0.0) b.dist = loss::loss_dist(m_t, bar_t, m_s, bar_s, cfg.distance);
    }
  }
  b.total = loss::loss_total(b, w);
  return b;
}

TrainResult train_gate(const TaskData& target, const TaskData& source, const TrainConfig& cfg,
                       const nn::NetworkConfig& net, const EpochObserver& observer) {
  cfg.validate();
  check_task(target, "target");
  check_task(source, "source");
  const TaskData* tasks[2] = {&target, &source};
  const std::size_t batch_size[2] = {clamp_batch(cfg.batch_size, target.train.size(), "target"),
                                     clamp_batch(cfg.batch_size, source.train.size(), "source")};
  Loop loop(nn::Model(nn::ModelKind::Gate, net, cfg.seed), cfg, observer);
  BatchStream streams[2] = {{target.train.size(), batch_size[0]},
                            {source.train.size(), batch_size[1]}};
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.tasks.resize(2);
    std::vector<std::vector<std::size_t>> batches[2];
    for (std::size_t t = 0; t < 2; ++t) batches[t] = streams[t].epoch(cfg.epoch_batches, loop.rng());
    loss::LossValues acc[2];
    // target and source batches alternate so neither task's losses run in a block
    const std::size_t rounds = std::max(batches[0].size(), batches[1].size());
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t t = 0; t < 2; ++t) {
        if (r >= batches[t].size()) continue;
        const LabeledSet& set = tasks[t]->train;
        const auto& idx = batches[t][r];
        ad::Tape tape;
        loop.model().zero_grad();
        const auto gb = make_batch(set, idx);
        const auto y = label_column(set, idx);
        auto b = gate_losses(tape, loop.model(), t, gb, std::span<const double>(y.data(), y.size()),
                             cfg, loop.rng(), true);
        loop.step(b, tape);
        acc[t] += loss::values_of(b);
      }
    }
    for (std::size_t t = 0; t < 2; ++t)
      rec.tasks[t].train = acc[t].scaled(1.0 / static_cast<double>(batches[t].size()));
    for (std::size_t t = 0; t < 2; ++t) {
      if (t > 0 && !cfg.validation_losses) break;
      rec.tasks[t].train_rmse = rmse_on(loop.model(), t, tasks[t]->train);
      rec.tasks[t].val_rmse = rmse_on(loop.model(), t, tasks[t]->val);
      rec.tasks[t].val = cfg.validation_losses
                             ? gate_val_losses(loop.model(), t, tasks[t]->val, cfg)
                             : reg_val_loss(loop.model(), t, tasks[t]->val);
    }
    if (loop.finish_epoch(std::move(rec), result)) break;
  }
  return result;
}

TrainResult train_stl(const TaskData& data, const TrainConfig& cfg, const nn::NetworkConfig& net,
                      const EpochObserver& observer) {
  cfg.validate();
  check_task(data, "target");
  const std::size_t bs = clamp_batch(cfg.batch_size, data.train.size(), "target");
  Loop loop(nn::Model(nn::ModelKind::Stl, net, cfg.seed), cfg, observer);
  BatchStream stream(data.train.size(), bs);
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.tasks.resize(1);
    loss::LossValues acc;
    const auto batches = stream.epoch(cfg.epoch_batches, loop.rng());
    for (const auto& idx : batches) {
      ad::Tape tape;
      loop.model().zero_grad();
      const auto gb = make_batch(data.train, idx);
      ad::Value y = tape.constant(label_column(data.train, idx));
      nn::GraphRepr a = loop.model().embed(tape, gb);
      ad::Value z = loop.model().encode(tape, 0, gb, a, loop.rng(), true);
      loss::LossBundle b;
      b.reg = loss::loss_reg(y, loop.model().predict(tape, 0, z, loop.rng(), true));
      b.total = b.reg;
      loop.step(b, tape);
      acc += loss::values_of(b);
    }
    rec.tasks[0].train = acc.scaled(1.0 / static_cast<double>(batches.size()));
    rec.tasks[0].train_rmse = rmse_on(loop.model(), 0, data.train);
    rec.tasks[0].val_rmse = rmse_on(loop.model(), 0, data.val);
    rec.tasks[0].val = reg_val_loss(loop.model(), 0, data.val);
    if (loop.finish_epoch(std::move(rec), result)) break;
  }
  return result;
}

TrainResult train_mtl(const TaskData& target, const TaskData& source, const TrainConfig& cfg,
                      const nn::NetworkConfig& net, const EpochObserver& observer) {
  cfg.validate();
  check_task(target, "target");
  check_task(source, "source");
  const TaskData* tasks[2] = {&target, &source};
  const std::size_t batch_size[2] = {clamp_batch(cfg.batch_size, target.train.size(), "target"),
                                     clamp_batch(cfg.batch_size, source.train.size(), "source")};
  Loop loop(nn::Model(nn::ModelKind::Mtl, net, cfg.seed), cfg, observer);
  BatchStream streams[2] = {{target.train.size(), batch_size[0]},
                            {source.train.size(), batch_size[1]}};
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.tasks.resize(2);
    std::vector<std::vector<std::size_t>> batches[2];
    for (std::size_t t = 0; t < 2; ++t)
      batches[t] = streams[t].epoch(cfg.epoch_batches, loop.rng());
    loss::LossValues acc[2];
    const std::size_t rounds = std::max(batches[0].size(), batches[1].size());
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t t = 0; t < 2; ++t) {
        if (r >= batches[t].size()) continue;
        const LabeledSet& set = tasks[t]->train;
        ad::Tape tape;
        loop.model().zero_grad();
        const auto gb = make_batch(set, batches[t][r]);
        ad::Value y = tape.constant(label_column(set, batches[t][r]));
        nn::GraphRepr a = loop.model().embed(tape, gb);
        ad::Value z = loop.model().encode(tape, t, gb, a, loop.rng(), true);
        loss::LossBundle b;
        b.reg = loss::loss_reg(y, loop.model().predict(tape, t, z, loop.rng(), true));
        b.total = b.reg;
        loop.step(b, tape);
        acc[t] += loss::values_of(b);
      }
    }
    for (std::size_t t = 0; t < 2; ++t) {
      rec.tasks[t].train = acc[t].scaled(1.0 / static_cast<double>(batches[t].size()));
      if (t > 0 && !cfg.validation_losses) continue;
      rec.tasks[t].train_rmse = rmse_on(loop.model(), t, tasks[t]->train);
      rec.tasks[t].val_rmse = rmse_on(loop.model(), t, tasks[t]->val);
      rec.tasks[t].val = reg_val_loss(loop.model(), t, tasks[t]->val);
    }
    if (loop.finish_epoch(std::move(rec), result)) break;
  }
  return result;
}

}  // namespace gate::train
