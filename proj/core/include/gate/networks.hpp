#pragma once

// Model zoo: shared embedding DMPNN, per-task encoder (DMPNN backbone +
// bottleneck MLP), transfer / inverse-transfer MLPs, regression head, and
// the latent perturbation generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gate/autodiff.hpp"
#include "gate/dmpnn.hpp"

namespace gate::nn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MlpSpec {
  std::vector<std::size_t> widths;
  double dropout = 0.0;
};

/// Layer widths for every network. Defaults reproduce the published sizes:
/// backbone DMPNN hidden 200 / out 100, bottleneck 100->50 (hidden 50),
/// transfer and inverse 50->100->100->100->50 with dropout 0.2, head
/// 50->25->12->1 with dropout 0.2.
struct NetworkConfig {
  DmpnnSpec embedding{chem::kNodeFeatureWidth, chem::kEdgeFeatureWidth, 200, 100, 2};
  DmpnnSpec backbone{100, 200, 200, 100, 2};
  MlpSpec bottleneck{{100, 50, 50}, 0.0};
  MlpSpec transfer{{50, 100, 100, 100, 50}, 0.2};
  MlpSpec inverse{{50, 100, 100, 100, 50}, 0.2};
  MlpSpec head{{50, 25, 12, 1}, 0.2};

  /// Throws ConfigError naming the first violated width contract.
  void validate() const;
  std::size_t latent_width() const { return bottleneck.widths.back(); }

  static NetworkConfig published();
  /// Every width divided by four, floored at 8; used for desk-scale runs.
  static NetworkConfig quartered();
  /// Tiny widths for gradient checks.
  static NetworkConfig tiny(std::size_t hidden = 8, std::size_t latent = 4);
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpSpec& spec, std::mt19937_64& rng, const std::string& prefix);

  /// Linear layers with ReLU + dropout between them; the output layer is linear.
  ad::Value forward(ad::Tape& tape, ad::Value x, std::mt19937_64& rng, bool training);
  std::vector<ad::Parameter*> parameters();
  bool empty() const { return weights_.empty(); }
  std::size_t in_width() const { return spec_.widths.front(); }
  std::size_t out_width() const { return spec_.widths.back(); }

 private:
  MlpSpec spec_;
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
};

struct Encoder {
  Dmpnn backbone;
  Mlp bottleneck;

  /// z = bottleneck(pooled backbone(a)), one row per graph in the batch.
  ad::Value forward(ad::Tape& tape, const GraphBatch& batch, const GraphRepr& a,
                    std::mt19937_64& rng, bool training);
  std::vector<ad::Parameter*> parameters();
};

/// Per-task networks. For STL only encoder+head are populated; for MTL the
/// second task carries a head only and borrows the first task's encoder.
struct TaskNetworks {
  Encoder encoder;
  Mlp transfer;
  Mlp inverse;
  Mlp head;

  std::vector<ad::Parameter*> parameters();
};

struct PerturbConfig {
  std::size_t count = 10;
  double sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PerturbConfig& c);
void from_json(const nlohmann::json& j, PerturbConfig& c);

/// M copies of `a` with i.i.d. N(0, sigma^2) noise on node states; edge states
/// are shared and pooled vectors are recomputed from the noisy node states.
std::vector<GraphRepr> perturb(const GraphRepr& a, const GraphBatch& batch,
                               const PerturbConfig& cfg, std::mt19937_64& rng);
std::vector<GraphRepr> perturb(const GraphRepr& a, const GraphBatch& batch,
                               const PerturbConfig& cfg);

/// Pivot and its perturbations stacked into one representation over
/// batch.tiled(count + 1): block 0 is the pivot, block j the j-th copy.
struct StackedRepr {
  GraphBatch batch;
  GraphRepr repr;
  std::size_t copies = 0;  // count + 1
};
StackedRepr perturb_stacked(const GraphRepr& a, const GraphBatch& batch,
                            const PerturbConfig& cfg, std::mt19937_64& rng);

enum class ModelKind { Gate, Stl, Mtl };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

class Model {
 public:
  Model() = default;
  Model(ModelKind kind, const NetworkConfig& config, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  const NetworkConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_tasks() const { return tasks_.size(); }

  GraphRepr embed(ad::Tape& tape, const GraphBatch& batch);
  Encoder& encoder(std::size_t task);
  TaskNetworks& task(std::size_t t) { return tasks_.at(t); }

  ad::Value encode(ad::Tape& tape, std::size_t task, const GraphBatch& batch, const GraphRepr& a,
                   std::mt19937_64& rng, bool training);
  ad::Value transfer(ad::Tape& tape, std::size_t task, ad::Value z, std::mt19937_64& rng,
                     bool training);
  ad::Value inverse_transfer(ad::Tape& tape, std::size_t task, ad::Value m,
                             std::mt19937_64& rng, bool training);
  ad::Value predict(ad::Tape& tape, std::size_t task, ad::Value z, std::mt19937_64& rng,
                    bool training);

  /// Eval-mode predictions for every molecule in `batch`, in order.
  std::vector<double> predict_batch(std::size_t task, const GraphBatch& batch);
  /// Eval-mode latent z for every molecule in `batch` (rows).
  ad::Matrix latents(std::size_t task, const GraphBatch& batch);

  /// Declaration order: embedding, then per task encoder, transfer, inverse, head.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  ModelKind kind_ = ModelKind::Gate;
  NetworkConfig config_;
  std::uint64_t seed_ = 0;
  Dmpnn embedding_;
  std::vector<TaskNetworks> tasks_;
};

/// Checkpoint layout: one line of compact JSON (kind, config, seed, parameter
/// shapes, caller metadata) terminated by '\n', followed by every parameter's
/// values as little-endian f64 in declaration order.
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
std::string serialize_checkpoint(const Model& model,
                                 const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace gate::nn
