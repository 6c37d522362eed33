#pragma once

// Optimization loop for GATE and the STL / MTL baselines, AdamW and early
// stopping.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gate/autodiff.hpp"
#include "gate/losses.hpp"
#include "gate/networks.hpp"
#include "gate/smiles.hpp"

namespace gate::train {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moments are indexed by position in the parameter list passed to adamw_step.
struct AdamWState {
  AdamWConfig config;
  std::vector<ad::Matrix> first;
  std::vector<ad::Matrix> second;
  std::vector<std::size_t> steps;  // per parameter; untouched parameters do not advance
  std::size_t step = 0;            // number of adamw_step calls
};

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta for every
/// parameter that received a gradient since its last zero_grad(); others are skipped.
void adamw_step(std::span<ad::Parameter* const> params, AdamWState& state, double lr);

enum class Decision { Continue, Stop };

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's validation metric. Returns Stop once `patience`
  /// consecutive epochs pass without strict improvement.
  Decision observe(std::size_t epoch, double metric);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
  bool improved_ = false;
};

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 600;
  std::size_t patience = 50;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  nn::PerturbConfig perturb;
  loss::LossWeights weights;
  loss::ConsistencyMode consistency = loss::ConsistencyMode::Paired;
  loss::DistanceMode distance = loss::DistanceMode::Vector;
  AdamWConfig adamw;
  /// Full per-epoch diagnostics: GATE loss bundles on validation data and
  /// source-task RMSEs. When off, only target-task metrics are computed and
  /// the source entries keep NaN RMSEs.
  bool validation_losses = true;
  /// Batches drawn per task per epoch; 0 means one full pass over every task.
  std::size_t epoch_batches = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LabeledSet {
  std::vector<chem::MolGraph> graphs;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
};

struct TaskData {
  LabeledSet train;
  LabeledSet val;
};

struct TaskEpoch {
  loss::LossValues train;   // batch means during the epoch (training mode)
  loss::LossValues val;     // eval mode on the validation set
  double train_rmse = std::numeric_limits<double>::quiet_NaN();  // eval mode, training set
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::vector<TaskEpoch> tasks;
};

nlohmann::json to_ndjson_records(const EpochRecord& r);

struct TrainResult {
  nn::Model model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_rmse = std::numeric_limits<double>::infinity();
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Alternates over both tasks each epoch; every batch of task t is pushed
/// through both pipelines and optimized on the weighted alignment objective.
/// Early stopping tracks the target (task 0) validation RMSE.
TrainResult train_gate(const TaskData& target, const TaskData& source, const TrainConfig& cfg,
                       const nn::NetworkConfig& net, const EpochObserver& observer = {});
TrainResult train_stl(const TaskData& data, const TrainConfig& cfg, const nn::NetworkConfig& net,
                      const EpochObserver& observer = {});
TrainResult train_mtl(const TaskData& target, const TaskData& source, const TrainConfig& cfg,
                      const nn::NetworkConfig& net, const EpochObserver& observer = {});

/// Loss bundle for one batch of task `t` against the other task of a GATE model.
loss::LossBundle gate_losses(ad::Tape& tape, nn::Model& model, std::size_t t,
                             const nn::GraphBatch& batch, std::span<const double> labels,
                             const TrainConfig& cfg, std::mt19937_64& rng, bool training);

double rmse_on(nn::Model& model, std::size_t task, const LabeledSet& set);

}  // namespace gate::train
