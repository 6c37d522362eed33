#include "gate/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "gate/metrics.hpp"
#include "gate/smiles.hpp"

namespace gate::eval {

using nlohmann::json;

// ---- PCA ------------------------------------------------------------------------

EigenDecomposition jacobi_eigen(const Eigen::MatrixXd& input, double tol, std::size_t max_sweeps) {
  const Eigen::Index n = input.rows();
  if (input.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix is not square");
  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  EigenDecomposition out;
  while (off_norm() > tol * scale) {
    if (out.sweeps == max_sweeps) throw std::runtime_error("jacobi_eigen: no convergence");
    ++out.sweeps;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.values(k) = a(src, src);
    Eigen::VectorXd col = v.col(src);
    Eigen::Index big = 0;
    col.cwiseAbs().maxCoeff(&big);
    if (col(big) < 0.0) col = -col;
    out.vectors.col(k) = col;
  }
  return out;
}

PcaResult pca_project(const Eigen::MatrixXd& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k == 0 || k > static_cast<std::size_t>(x.cols()))
    throw std::invalid_argument("pca_project: k must lie in [1, columns]");
  if (n < k + 1)
    throw std::invalid_argument("pca_project: need at least k + 1 = " + std::to_string(k + 1) +
                                " rows, got " + std::to_string(n));
  PcaResult r;
  r.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - r.mean.transpose();
  r.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  const EigenDecomposition e = jacobi_eigen(r.covariance);
  r.eigenvalues = e.values;
  r.components = e.vectors.leftCols(static_cast<Eigen::Index>(k));
  r.projections = centered * r.components;
  return r;
}

// ---- configuration ----------------------------------------------------------------

RunConfig RunConfig::desk(std::uint64_t seed) {
  RunConfig c;
  c.name = "synthetic-desk";
  c.network = nn::NetworkConfig::quartered();
  c.train.max_epochs = 100;
  c.train.patience = 100;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 16;
  c.train.epoch_batches = 9;
  c.train.perturb.count = 4;
  c.train.validation_losses = false;
  c.reseed(seed);
  return c;
}

void RunConfig::reseed(std::uint64_t seed) {
  synth.seed = seed;
  split_seed = seed;
  train.seed = seed;
  train.perturb.seed = seed;
  corruption_seed = seed;
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"name", c.name},
           {"target_csv", c.target_csv},
           {"source_csv", c.source_csv},
           {"synth", c.synth},
           {"split", data::to_string(c.split)},
           {"split_seed", c.split_seed},
           {"train", c.train},
           {"network", c.network},
           {"corruption_fraction", c.corruption_fraction},
           {"corruption_seed", c.corruption_seed}};
}

void from_json(const json& j, RunConfig& c) {
  c.name = j.value("name", c.name);
  c.target_csv = j.value("target_csv", c.target_csv);
  c.source_csv = j.value("source_csv", c.source_csv);
  if (j.contains("synth")) c.synth = j["synth"].get<data::SynthConfig>();
  if (j.contains("split")) c.split = data::split_mode_from_string(j["split"].get<std::string>());
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("train")) c.train = j["train"].get<train::TrainConfig>();
  if (j.contains("network")) c.network = j["network"].get<nn::NetworkConfig>();
  c.corruption_fraction = j.value("corruption_fraction", c.corruption_fraction);
  c.corruption_seed = j.value("corruption_seed", c.corruption_seed);
}

// ---- data assembly ----------------------------------------------------------------

TaskPair load_pair(const RunConfig& cfg) {
  data::Dataset target, source;
  if (cfg.target_csv.empty() != cfg.source_csv.empty())
    throw nn::ConfigError("target_csv and source_csv must be given together");
  if (cfg.target_csv.empty()) {
    std::tie(target, source) = data::synth_pair(cfg.synth);
  } else {
    target = data::load_csv(cfg.target_csv).dataset;
    source = data::load_csv(cfg.source_csv).dataset;
  }
  TaskPair p;
  p.name = cfg.name;
  p.target = data::normalize(target).first;
  p.source = data::normalize(source).first;
  return p;
}

train::LabeledSet labeled(const data::Dataset& d, const std::vector<std::size_t>& indices) {
  train::LabeledSet s;
  s.graphs.reserve(indices.size());
  s.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const data::Record& r = d.records.at(i);
    s.graphs.push_back(chem::load_molecule(r.smiles));
    s.labels.push_back(r.value);
  }
  return s;
}

HoldoutIndices holdout_indices(std::vector<std::size_t> indices, double val_fraction,
                               std::uint64_t seed) {
  if (indices.size() < 2) throw ExperimentError("holdout: need at least two records");
  std::mt19937_64 rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(indices.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, indices.size() - 1);
  HoldoutIndices h;
  h.val.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_val));
  h.train.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_val), indices.end());
  std::sort(h.val.begin(), h.val.end());
  std::sort(h.train.begin(), h.train.end());
  return h;
}

train::TaskData holdout(const data::Dataset& d, std::vector<std::size_t> indices,
                        double val_fraction, std::uint64_t seed) {
  const HoldoutIndices h = holdout_indices(std::move(indices), val_fraction, seed);
  return {labeled(d, h.train), labeled(d, h.val)};
}

std::vector<std::size_t> target_fold_indices(const data::SplitManifest& m, int excluded_fold) {
  std::vector<std::size_t> idx;
  for (const auto& a : m.assignments)
    if (a.role == data::Role::Train && a.fold != excluded_fold) idx.push_back(a.index);
  return idx;
}

train::TaskData target_fold_data(const TaskPair& pair, const data::SplitManifest& m,
                                 int excluded_fold, double val_fraction, std::uint64_t seed) {
  return holdout(pair.target, target_fold_indices(m, excluded_fold), val_fraction, seed);
}

train::TaskData source_data(const TaskPair& pair, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(pair.source.size());
  std::iota(idx.begin(), idx.end(), 0);
  return holdout(pair.source, std::move(idx), val_fraction, seed);
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return fold < 0 ? seed : seed ^ static_cast<std::uint64_t>(fold);
}

// ---- cross-validation -------------------------------------------------------------

json to_json(const MetricsReport& r, bool timing) {
  json folds = json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"test_rmse", f.test_rmse},
                     {"best_val_rmse", f.best_val_rmse},
                     {"best_epoch", f.best_epoch},
                     {"epochs", f.epochs}});
  json j{{"method", r.method},
         {"pair", r.pair},
         {"folds", folds},
         {"mean_rmse", r.mean_rmse},
         {"std_rmse", r.std_rmse},
         {"relative_rmse", r.relative_rmse ? json(*r.relative_rmse) : json(nullptr)},
         {"run_config", r.run_config}};
  if (timing) j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  r.method = j.at("method").get<std::string>();
  r.pair = j.value("pair", std::string{});
  for (const auto& f : j.at("folds"))
    r.folds.push_back({f.at("fold").get<int>(), f.at("test_rmse").get<double>(),
                       f.value("best_val_rmse", 0.0), f.value("best_epoch", std::size_t{0}),
                       f.value("epochs", std::size_t{0})});
  r.mean_rmse = j.at("mean_rmse").get<double>();
  r.std_rmse = j.value("std_rmse", 0.0);
  if (j.contains("relative_rmse") && !j["relative_rmse"].is_null())
    r.relative_rmse = j["relative_rmse"].get<double>();
  r.runtime_seconds = j.value("runtime_seconds", 0.0);
  r.run_config = j.value("run_config", json::object());
  return r;
}

std::string to_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "method,pair,fold,test_rmse,best_val_rmse,best_epoch\n";
  for (const auto& r : reports)
    for (const auto& f : r.folds)
      os << r.method << ',' << r.pair << ',' << f.fold << ',' << f.test_rmse << ','
         << f.best_val_rmse << ',' << f.best_epoch << '\n';
  return os.str();
}

train::TrainResult train_method(nn::ModelKind method, const train::TaskData& target,
                                const train::TaskData& source, const train::TrainConfig& cfg,
                                const nn::NetworkConfig& net, const train::EpochObserver& observer) {
  switch (method) {
    case nn::ModelKind::Gate: return train::train_gate(target, source, cfg, net, observer);
    case nn::ModelKind::Stl: return train::train_stl(target, cfg, net, observer);
    case nn::ModelKind::Mtl: return train::train_mtl(target, source, cfg, net, observer);
  }
  throw std::logic_error("unknown model kind");
}

namespace {

std::size_t worker_count(std::size_t jobs) {
  std::size_t threads = 1;
  if (const char* env = std::getenv("GATE_THREADS")) {
    try {
      threads = static_cast<std::size_t>(std::max(1L, std::stol(env)));
    } catch (const std::exception&) {
      throw nn::ConfigError(std::string("GATE_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return std::min(threads, jobs);
}

// Runs job(i) for i in [0, n) on up to GATE_THREADS threads; rethrows the
// first failure in index order.
template <class Job>
void parallel_for(std::size_t n, const Job& job) {
  const std::size_t workers = worker_count(n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

MetricsReport cross_validate(nn::ModelKind method, const TaskPair& pair,
                             const data::SplitManifest& manifest, const RunConfig& cfg) {
  if (manifest.fold_count() != data::kFolds)
    throw nn::ConfigError("cross_validate: manifest has " + std::to_string(manifest.fold_count()) +
                          " folds, expected " + std::to_string(data::kFolds));
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport report;
  report.method = nn::to_string(method);
  report.pair = pair.name;
  report.run_config = cfg;
  report.folds.resize(data::kFolds);

  const train::LabeledSet test = labeled(pair.target, manifest.test_indices());
  parallel_for(data::kFolds, [&](std::size_t i) {
    const int fold = static_cast<int>(i);
    train::TrainConfig tc = cfg.train;
    tc.seed = fold_seed(cfg.train.seed, fold);
    const train::TaskData target = target_fold_data(pair, manifest, fold, tc.val_fraction, tc.seed);
    const train::TaskData source = method == nn::ModelKind::Stl
                                       ? train::TaskData{}
                                       : source_data(pair, tc.val_fraction, tc.seed);
    train::TrainResult r = train_method(method, target, source, tc, cfg.network);
    FoldResult& f = report.folds[i];
    f.fold = fold;
    f.test_rmse = train::rmse_on(r.model, 0, test);
    f.best_val_rmse = r.best_val_rmse;
    f.best_epoch = r.best_epoch;
    f.epochs = r.history.size();
  });

  std::vector<double> rmses;
  for (const auto& f : report.folds) rmses.push_back(f.test_rmse);
  report.mean_rmse = mean(rmses);
  report.std_rmse = stddev(rmses);
  report.runtime_seconds = seconds_since(t0);
  return report;
}

void attach_relative_rmse(std::vector<MetricsReport>& reports) {
  const auto gate = std::find_if(reports.begin(), reports.end(), [](const MetricsReport& r) {
    return r.method == nn::to_string(nn::ModelKind::Gate);
  });
  if (gate == reports.end()) throw ExperimentError("relative RMSE needs a GATE report");
  const double reference = gate->mean_rmse;
  for (auto& r : reports) r.relative_rmse = reference / r.mean_rmse;
}

json relative_table(const std::vector<MetricsReport>& reports) {
  std::vector<MetricsReport> copy = reports;
  attach_relative_rmse(copy);
  json rows = json::array();
  for (const auto& r : copy)
    rows.push_back({{"method", r.method},
                    {"pair", r.pair},
                    {"mean_rmse", r.mean_rmse},
                    {"std_rmse", r.std_rmse},
                    {"relative_rmse", *r.relative_rmse}});
  return json{{"reference", nn::to_string(nn::ModelKind::Gate)},
              {"definition", "gate_rmse / method_rmse"},
              {"rows", rows}};
}

// ---- corruption -------------------------------------------------------------------

CorruptionReport corruption_experiment(const TaskPair& pair, const data::SplitManifest& manifest,
                                       const RunConfig& cfg) {
  const std::vector<std::size_t> train_idx = manifest.train_indices();
  const data::Corruption c =
      data::corrupt(pair.target.subset(train_idx), cfg.corruption_seed, cfg.corruption_fraction);
  if (c.indices.empty()) throw ExperimentError("corruption experiment: no corrupted points");

  TaskPair corrupted = pair;
  CorruptionReport report;
  report.run_config = cfg;
  for (std::size_t k = 0; k < c.indices.size(); ++k) {
    const std::size_t target_index = train_idx[c.indices[k]];
    corrupted.target.records[target_index].value = c.dataset.records[c.indices[k]].value;
    report.indices.push_back(target_index);
  }
  report.corrupted = report.indices.size();

  const train::TaskData target =
      holdout(corrupted.target, train_idx, cfg.train.val_fraction, cfg.train.seed);
  const train::TaskData source = source_data(pair, cfg.train.val_fraction, cfg.train.seed);
  const train::LabeledSet probe = labeled(pair.target, report.indices);

  auto score = [&](nn::ModelKind kind) {
    train::TrainResult r = train_method(kind, target, source, cfg.train, cfg.network);
    std::vector<const chem::MolGraph*> ptrs;
    for (const auto& g : probe.graphs) ptrs.push_back(&g);
    const auto pred = r.model.predict_batch(0, nn::GraphBatch::from(ptrs));
    return mse(c.original, pred);
  };
  report.gate_mse = score(nn::ModelKind::Gate);
  report.mtl_mse = score(nn::ModelKind::Mtl);
  return report;
}

json to_json(const CorruptionReport& r) {
  return json{{"corrupted", r.corrupted},
              {"indices", r.indices},
              {"gate_mse", r.gate_mse},
              {"mtl_mse", r.mtl_mse},
              {"run_config", r.run_config}};
}

// ---- ablation ---------------------------------------------------------------------

std::vector<AblationVariant> default_ablation() {
  return {{"map", {1.0, 1.0, 0.0, 0.0}},
          {"map+cons", {1.0, 1.0, 1.0, 0.0}},
          {"map+cons+dist", {1.0, 1.0, 1.0, 1.0}}};
}

AblationReport ablation_losses(const TaskPair& pair, const data::SplitManifest& manifest,
                               const RunConfig& cfg, const std::vector<AblationVariant>& variants) {
  AblationReport report;
  report.run_config = cfg;
  const train::TaskData target =
      target_fold_data(pair, manifest, -1, cfg.train.val_fraction, cfg.train.seed);
  const train::TaskData source = source_data(pair, cfg.train.val_fraction, cfg.train.seed);
  report.runs.resize(variants.size());
  parallel_for(variants.size(), [&](std::size_t i) {
    train::TrainConfig tc = cfg.train;
    tc.weights = variants[i].weights;
    train::TrainResult r = train::train_gate(target, source, tc, cfg.network);
    AblationRun& run = report.runs[i];
    run.variant = variants[i];
    run.best_epoch = r.best_epoch;
    run.best_val_rmse = r.best_val_rmse;
    const train::TaskEpoch& best = r.history.at(r.best_epoch - 1).tasks.at(0);
    run.train_mse = best.train_rmse * best.train_rmse;
    run.val_mse = best.val_rmse * best.val_rmse;
    run.history = std::move(r.history);
  });
  return report;
}

json to_json(const AblationReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"label", run.variant.label},
                    {"weights", run.variant.weights},
                    {"epochs", run.history.size()},
                    {"best_epoch", run.best_epoch},
                    {"best_val_rmse", run.best_val_rmse},
                    {"train_mse", run.train_mse},
                    {"val_mse", run.val_mse},
                    {"overfit_gap", run.overfit_gap()}});
  return json{{"runs", runs}, {"run_config", r.run_config}};
}

std::string curves_ndjson(const AblationRun& run) {
  std::string out;
  for (const auto& rec : run.history)
    for (json line : train::to_ndjson_records(rec)) {
      line["variant"] = run.variant.label;
      out += line.dump();
      out += '\n';
    }
  return out;
}

}  // namespace gate::eval
