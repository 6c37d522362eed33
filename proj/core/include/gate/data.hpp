#pragma once

// Datasets: CSV ingestion, label normalization, random / scaffold splits
// with four cross-validation folds, label corruption, and a synthetic
// correlated task-pair generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace gate::data {

inline constexpr std::size_t kFolds = 4;
inline constexpr double kTestFraction = 0.2;

class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& what, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class NormalizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Record {
  std::string smiles;
  double value = 0.0;
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

struct Dataset {
  std::string name;
  std::vector<Record> records;
  std::optional<NormStats> stats;  // set once values are normalized

  std::size_t size() const { return records.size(); }
  std::vector<double> values() const;
  std::vector<std::string> smiles() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

struct LoadResult {
  Dataset dataset;
  std::size_t dropped = 0;  // rows whose SMILES failed to parse
};

/// Header must be "smiles,value". Unparseable SMILES are dropped and counted;
/// a malformed numeric field is a LoadError carrying its 1-based line number.
LoadResult load_csv(const std::filesystem::path& path);
LoadResult read_csv(std::istream& in, const std::string& name);
void save_csv(const Dataset& d, const std::filesystem::path& path);

/// Population mean / std; throws NormalizationError on zero variance.
NormStats fit_normalization(const Dataset& d);
Dataset apply_normalization(const Dataset& d, const NormStats& stats);
std::pair<Dataset, NormStats> normalize(const Dataset& d);
double denormalize(double normalized, const NormStats& stats);

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

enum class SplitMode { Random, Scaffold };
enum class Role { Train, Test };

struct Assignment {
  std::size_t index = 0;
  int fold = -1;  // 0..kFolds-1 for training records, -1 for test records
  Role role = Role::Train;
};

struct SplitManifest {
  std::string name;
  SplitMode mode = SplitMode::Random;
  std::uint64_t seed = 0;
  std::vector<Assignment> assignments;  // ordered by record index
  std::vector<std::size_t> corrupted;

  std::vector<std::size_t> test_indices() const;
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> fold_indices(int fold) const;
  std::size_t fold_count() const;
};

void to_json(nlohmann::json& j, const SplitManifest& m);
void from_json(const nlohmann::json& j, SplitManifest& m);
std::string to_string(SplitMode m);
SplitMode split_mode_from_string(const std::string& s);

/// 80:20 train/test, training records dealt uniformly at random into 4 folds.
SplitManifest split_random(const Dataset& d, std::uint64_t seed);
/// Scaffold groups are packed largest-first into the test set and the 4 folds,
/// always into the bin furthest below its target size.
SplitManifest split_scaffold(const Dataset& d, std::uint64_t seed);
SplitManifest make_split(const Dataset& d, SplitMode mode, std::uint64_t seed);

struct Corruption {
  Dataset dataset;
  std::vector<std::size_t> indices;  // corrupted record indices, ascending
  std::vector<double> original;      // values before corruption, same order
};

/// On normalized data: records with |v| > 1 are candidates; a random
/// `fraction` of them get v <- -2 sign(v).
Corruption corrupt(const Dataset& normalized, std::uint64_t seed, double fraction = 1.0);

struct SynthConfig {
  std::size_t n_target = 200;
  std::size_t n_source = 2000;
  double rho = 0.9;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Random parseable SMILES drawn from a small chain/ring grammar.
std::string random_smiles(std::mt19937_64& rng);
/// Distinct random molecules.
std::vector<std::string> random_molecules(std::size_t n, std::mt19937_64& rng);

/// Standardized mix of atom count, ring count and heteroatom fraction over the pool.
std::vector<double> latent_descriptor(const std::vector<std::string>& smiles);

struct PairLabels {
  std::vector<double> target;
  std::vector<double> source;
};
/// target = u + e_t, source = rho u + sqrt(1 - rho^2) w + e_s, e ~ N(0, noise^2).
PairLabels synth_labels(const std::vector<std::string>& smiles, double rho, double noise,
                        std::uint64_t seed);

/// Target and source datasets over disjoint molecules.
std::pair<Dataset, Dataset> synth_pair(const SynthConfig& cfg);

}  // namespace gate::data
