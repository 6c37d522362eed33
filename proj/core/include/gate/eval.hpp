#pragma once

// Experiment drivers: run configuration, four-fold cross-validation,
// corruption robustness, loss ablation, PCA of latent spaces and report
// serialization.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "gate/data.hpp"
#include "gate/losses.hpp"
#include "gate/networks.hpp"
#include "gate/training.hpp"

namespace gate::eval {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- PCA ------------------------------------------------------------------------

struct EigenDecomposition {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // column i pairs with values(i)
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi rotations on a symmetric matrix.
EigenDecomposition jacobi_eigen(const Eigen::MatrixXd& a, double tol = 1e-14,
                                std::size_t max_sweeps = 100);

struct PcaResult {
  Eigen::MatrixXd projections;  // N x k, centered data times components
  Eigen::MatrixXd components;   // D x k
  Eigen::VectorXd eigenvalues;  // all D, descending
  Eigen::MatrixXd covariance;   // D x D, normalized by N - 1
  Eigen::VectorXd mean;
};

/// Requires N >= k + 1 rows.
PcaResult pca_project(const Eigen::MatrixXd& x, std::size_t k = 2);

// ---- configuration ----------------------------------------------------------------

struct RunConfig {
  std::string name = "synthetic";
  std::string target_csv;  // both empty: synthetic pair from `synth`
  std::string source_csv;
  data::SynthConfig synth;
  data::SplitMode split = data::SplitMode::Random;
  std::uint64_t split_seed = 0;
  train::TrainConfig train;
  nn::NetworkConfig network;
  double corruption_fraction = 1.0;
  std::uint64_t corruption_seed = 0;

  /// Desk-scale settings: quartered widths, 100 epochs, synthetic pair.
  static RunConfig desk(std::uint64_t seed = 0);
  /// Reseeds every stochastic component from one seed.
  void reseed(std::uint64_t seed);
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// ---- data assembly ----------------------------------------------------------------

/// Both tasks with labels normalized per task.
struct TaskPair {
  std::string name;
  data::Dataset target;
  data::Dataset source;
};

TaskPair load_pair(const RunConfig& cfg);

train::LabeledSet labeled(const data::Dataset& d, const std::vector<std::size_t>& indices);

struct HoldoutIndices {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> val;
};

/// Splits `indices` into train / validation with `val_fraction` held out
/// (at least one record each side), shuffled by `seed`.
HoldoutIndices holdout_indices(std::vector<std::size_t> indices, double val_fraction,
                               std::uint64_t seed);
train::TaskData holdout(const data::Dataset& d, std::vector<std::size_t> indices,
                        double val_fraction, std::uint64_t seed);

/// Target training data from every fold except `excluded_fold` (-1 keeps all
/// four), with a validation slice held out.
std::vector<std::size_t> target_fold_indices(const data::SplitManifest& m, int excluded_fold);
train::TaskData target_fold_data(const TaskPair& pair, const data::SplitManifest& m,
                                 int excluded_fold, double val_fraction, std::uint64_t seed);
train::TaskData source_data(const TaskPair& pair, double val_fraction, std::uint64_t seed);

/// Per-fold training seed.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

// ---- cross-validation -------------------------------------------------------------

struct FoldResult {
  int fold = 0;
  double test_rmse = 0.0;
  double best_val_rmse = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
};

struct MetricsReport {
  std::string method;
  std::string pair;
  std::vector<FoldResult> folds;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  std::optional<double> relative_rmse;  // GATE RMSE / this method's RMSE
  double runtime_seconds = 0.0;
  nlohmann::json run_config;
};

/// `timing` adds runtime_seconds, the only field not reproducible across runs.
nlohmann::json to_json(const MetricsReport& r, bool timing = true);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
/// Flat CSV: method,pair,fold,test_rmse,best_val_rmse,best_epoch.
std::string to_csv(const std::vector<MetricsReport>& reports);

train::TrainResult train_method(nn::ModelKind method, const train::TaskData& target,
                                const train::TaskData& source, const train::TrainConfig& cfg,
                                const nn::NetworkConfig& net,
                                const train::EpochObserver& observer = {});

/// For each of the four folds: train on the other three with a held-out
/// validation slice for early stopping, then score the fixed test set.
/// Folds run on up to GATE_THREADS threads; results are ordered by fold.
MetricsReport cross_validate(nn::ModelKind method, const TaskPair& pair,
                             const data::SplitManifest& manifest, const RunConfig& cfg);

/// GATE RMSE divided by each method's RMSE; GATE against itself is 1.
void attach_relative_rmse(std::vector<MetricsReport>& reports);
nlohmann::json relative_table(const std::vector<MetricsReport>& reports);

// ---- corruption -------------------------------------------------------------------

struct CorruptionReport {
  std::size_t corrupted = 0;
  std::vector<std::size_t> indices;  // target record indices
  double gate_mse = 0.0;             // against the original labels
  double mtl_mse = 0.0;
  nlohmann::json run_config;
};

/// Corrupts the target training records, trains GATE and MTL on them, and
/// scores predictions on the corrupted points against their original values.
CorruptionReport corruption_experiment(const TaskPair& pair, const data::SplitManifest& manifest,
                                       const RunConfig& cfg);
nlohmann::json to_json(const CorruptionReport& r);

// ---- ablation ---------------------------------------------------------------------

struct AblationVariant {
  std::string label;
  loss::LossWeights weights;
};

/// map only; map + consistency; map + consistency + distance.
std::vector<AblationVariant> default_ablation();

struct AblationRun {
  AblationVariant variant;
  std::vector<train::EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_rmse = 0.0;
  double train_mse = 0.0;  // target, eval mode, at the best epoch
  double val_mse = 0.0;
  double overfit_gap() const { return val_mse - train_mse; }
};

struct AblationReport {
  std::vector<AblationRun> runs;
  nlohmann::json run_config;
};

AblationReport ablation_losses(const TaskPair& pair, const data::SplitManifest& manifest,
                               const RunConfig& cfg,
                               const std::vector<AblationVariant>& variants = default_ablation());
nlohmann::json to_json(const AblationReport& r);
/// One NDJSON document per run: every task of every epoch on its own line.
std::string curves_ndjson(const AblationRun& run);

}  // namespace gate::eval
