// gate: command-line driver for data preparation, training, evaluation and
// the desk-scale experiments.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gate/data.hpp"
#include "gate/eval.hpp"
#include "gate/geometry.hpp"
#include "gate/metrics.hpp"
#include "gate/networks.hpp"
#include "gate/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gate;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "RunConfig JSON (defaults to the desk configuration)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Reseed every stochastic component");
}

eval::RunConfig resolve(const Common& c) {
  eval::RunConfig cfg = eval::RunConfig::desk();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    cfg = json::parse(in).get<eval::RunConfig>();
  }
  if (c.seed) cfg.reseed(*c.seed);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

data::SplitManifest manifest_for(const eval::TaskPair& pair, const eval::RunConfig& cfg) {
  return data::make_split(pair.target, cfg.split, cfg.split_seed);
}

std::vector<double> parse_point(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.empty()) throw CLI::ValidationError("--point", "expected comma-separated numbers");
  return v;
}

std::string label_slug(std::string s) {
  for (char& ch : s)
    if (ch == '+') ch = '_';
  return s;
}

// ---- subcommands -----------------------------------------------------------------

int run_synth(const Common& c, std::optional<double> rho, std::optional<std::size_t> n_target,
              std::optional<std::size_t> n_source, std::optional<double> noise,
              const std::string& out_dir) {
  eval::RunConfig cfg = resolve(c);
  if (rho) cfg.synth.rho = *rho;
  if (n_target) cfg.synth.n_target = *n_target;
  if (n_source) cfg.synth.n_source = *n_source;
  if (noise) cfg.synth.noise = *noise;
  const auto [target, source] = data::synth_pair(cfg.synth);
  fs::create_directories(out_dir);
  data::save_csv(target, fs::path(out_dir) / "target.csv");
  data::save_csv(source, fs::path(out_dir) / "source.csv");
  std::cout << json{{"target", (fs::path(out_dir) / "target.csv").string()},
                    {"source", (fs::path(out_dir) / "source.csv").string()},
                    {"n_target", target.size()},
                    {"n_source", source.size()},
                    {"synth", cfg.synth}}
                   .dump(2)
            << "\n";
  return 0;
}

int run_split(const Common& c, const std::string& data_path, const std::string& mode,
              const std::string& out) {
  eval::RunConfig cfg = resolve(c);
  if (!mode.empty()) cfg.split = data::split_mode_from_string(mode);
  data::Dataset d;
  if (data_path.empty()) {
    d = data::synth_pair(cfg.synth).first;
  } else {
    auto loaded = data::load_csv(data_path);
    if (loaded.dropped > 0)
      std::cerr << "warning: dropped " << loaded.dropped << " unparseable SMILES\n";
    d = std::move(loaded.dataset);
  }
  const data::SplitManifest m = data::make_split(d, cfg.split, cfg.split_seed);
  write_json(out, m);
  std::cerr << "split " << m.name << ": " << m.train_indices().size() << " train, "
            << m.test_indices().size() << " test\n";
  return 0;
}

int run_corrupt(const Common& c, const std::string& data_path, std::optional<double> fraction,
                const std::string& manifest_in, const std::string& manifest_out,
                const std::string& out) {
  eval::RunConfig cfg = resolve(c);
  if (fraction) cfg.corruption_fraction = *fraction;
  const data::Dataset raw = data::load_csv(data_path).dataset;
  const auto [normalized, stats] = data::normalize(raw);

  std::vector<std::size_t> scope(raw.size());
  std::iota(scope.begin(), scope.end(), 0);
  std::optional<data::SplitManifest> manifest;
  if (!manifest_in.empty()) {
    manifest = read_json(manifest_in).get<data::SplitManifest>();
    scope = manifest->train_indices();
  }
  const data::Corruption cor =
      data::corrupt(normalized.subset(scope), cfg.corruption_seed, cfg.corruption_fraction);

  data::Dataset result = raw;
  std::vector<std::size_t> indices;
  for (std::size_t i : cor.indices) {
    const std::size_t idx = scope[i];
    result.records[idx].value = data::denormalize(cor.dataset.records[i].value, stats);
    indices.push_back(idx);
  }
  data::save_csv(result, out);
  if (manifest) {
    manifest->corrupted = indices;
    write_json(manifest_out.empty() ? manifest_in : manifest_out, *manifest);
  }
  std::cout << json{{"corrupted", indices.size()}, {"indices", indices}}.dump() << "\n";
  return 0;
}

int run_train(const Common& c, const std::string& method, const std::string& out,
              const std::string& curves) {
  eval::RunConfig cfg = resolve(c);
  const nn::ModelKind kind = nn::model_kind_from_string(method);
  const eval::TaskPair pair = eval::load_pair(cfg);
  const data::SplitManifest m = manifest_for(pair, cfg);
  const eval::HoldoutIndices h =
      eval::holdout_indices(m.train_indices(), cfg.train.val_fraction, cfg.train.seed);
  const train::TaskData target{eval::labeled(pair.target, h.train),
                               eval::labeled(pair.target, h.val)};
  const train::TaskData source = kind == nn::ModelKind::Stl
                                     ? train::TaskData{}
                                     : eval::source_data(pair, cfg.train.val_fraction, cfg.train.seed);

  std::ofstream curve_out;
  if (!curves.empty()) {
    if (fs::path(curves).has_parent_path()) fs::create_directories(fs::path(curves).parent_path());
    curve_out.open(curves);
  }
  const train::EpochObserver observer = [&](const train::EpochRecord& rec) {
    const auto& t = rec.tasks[0];
    std::cerr << "epoch " << rec.epoch << " train_rmse " << t.train_rmse << " val_rmse "
              << t.val_rmse << "\n";
    if (curve_out)
      for (const auto& line : train::to_ndjson_records(rec)) curve_out << line.dump() << "\n";
  };
  train::TrainResult r = eval::train_method(kind, target, source, cfg.train, cfg.network, observer);
  const json meta{{"method", method},
                  {"run_config", cfg},
                  {"best_epoch", r.best_epoch},
                  {"best_val_rmse", r.best_val_rmse},
                  {"val_indices", h.val},
                  {"train_indices", h.train}};
  nn::save_checkpoint(r.model, out, meta);
  std::cout << json{{"checkpoint", out},
                    {"best_epoch", r.best_epoch},
                    {"best_val_rmse", r.best_val_rmse},
                    {"epochs", r.history.size()}}
                   .dump(2)
            << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint) {
  nn::LoadedCheckpoint ck = nn::load_checkpoint(checkpoint);
  const eval::RunConfig cfg = ck.metadata.at("run_config").get<eval::RunConfig>();
  const eval::TaskPair pair = eval::load_pair(cfg);
  const data::SplitManifest m = manifest_for(pair, cfg);
  const auto val_idx = ck.metadata.at("val_indices").get<std::vector<std::size_t>>();
  const double recorded = ck.metadata.at("best_val_rmse").get<double>();
  const double val = train::rmse_on(ck.model, 0, eval::labeled(pair.target, val_idx));
  const double test = train::rmse_on(ck.model, 0, eval::labeled(pair.target, m.test_indices()));
  const double diff = std::abs(val - recorded);
  const bool reproduced = diff <= 1e-12;
  std::cout << std::setprecision(17)
            << json{{"checkpoint", checkpoint},
                    {"recorded_best_val_rmse", recorded},
                    {"val_rmse", val},
                    {"abs_diff", diff},
                    {"reproduced", reproduced},
                    {"test_rmse", test}}
                   .dump(2)
            << "\n";
  if (!reproduced) {
    std::cerr << "error: validation RMSE differs from the recorded value by " << diff << "\n";
    return 2;
  }
  return 0;
}

int run_ablate(const Common& c, const std::string& out_dir) {
  eval::RunConfig cfg = resolve(c);
  const eval::TaskPair pair = eval::load_pair(cfg);
  const data::SplitManifest m = manifest_for(pair, cfg);
  const eval::AblationReport rep = eval::ablation_losses(pair, m, cfg);
  fs::create_directories(out_dir);
  for (const auto& run : rep.runs)
    write_text(fs::path(out_dir) / ("curves_" + label_slug(run.variant.label) + ".ndjson"),
               eval::curves_ndjson(run));
  write_json(fs::path(out_dir) / "ablation.json", eval::to_json(rep));
  std::cout << eval::to_json(rep)["runs"].dump(2) << "\n";
  return 0;
}

int run_pca(const std::string& checkpoint, std::size_t k, const std::string& out_dir) {
  nn::LoadedCheckpoint ck = nn::load_checkpoint(checkpoint);
  const eval::RunConfig cfg = ck.metadata.at("run_config").get<eval::RunConfig>();
  const eval::TaskPair pair = eval::load_pair(cfg);
  std::vector<std::size_t> all(pair.target.size());
  std::iota(all.begin(), all.end(), 0);
  const train::LabeledSet set = eval::labeled(pair.target, all);
  std::vector<const chem::MolGraph*> ptrs;
  for (const auto& g : set.graphs) ptrs.push_back(&g);
  const nn::GraphBatch batch = nn::GraphBatch::from(ptrs);

  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << std::setprecision(17) << "task,index";
  for (std::size_t i = 0; i < k; ++i) csv << ",pc" << i + 1;
  csv << "\n";
  json summary = json::array();
  const std::size_t tasks = ck.model.kind() == nn::ModelKind::Gate ? ck.model.num_tasks() : 1;
  for (std::size_t t = 0; t < tasks; ++t) {
    const Eigen::MatrixXd z = ck.model.latents(t, batch);
    const eval::PcaResult p = eval::pca_project(z, k);
    for (Eigen::Index r = 0; r < p.projections.rows(); ++r) {
      csv << t << ',' << r;
      for (Eigen::Index col = 0; col < p.projections.cols(); ++col) csv << ',' << p.projections(r, col);
      csv << "\n";
    }
    summary.push_back({{"task", t},
                       {"eigenvalues", std::vector<double>(p.eigenvalues.data(),
                                                           p.eigenvalues.data() + p.eigenvalues.size())},
                       {"trace", p.covariance.trace()}});
  }
  write_text(fs::path(out_dir) / "projections.csv", csv.str());
  write_json(fs::path(out_dir) / "pca.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int run_geo_check(const std::string& metric, const std::string& point_text,
                  const std::string& checkpoint, std::size_t task, double h) {
  geo::MetricField field;
  std::optional<nn::LoadedCheckpoint> ck;
  geo::Vec x;
  if (metric == "euclidean") {
    const auto p = parse_point(point_text.empty() ? "0,0" : point_text);
    field = geo::euclidean(p.size());
    x = Eigen::Map<const geo::Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
  } else if (metric == "sphere") {
    const auto p = parse_point(point_text.empty() ? "0.7853981633974483,0" : point_text);
    field = geo::sphere();
    x = Eigen::Map<const geo::Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
  } else if (metric == "pullback") {
    if (checkpoint.empty()) throw CLI::ValidationError("--checkpoint", "required for pullback");
    ck = nn::load_checkpoint(checkpoint);
    if (ck->model.kind() != nn::ModelKind::Gate)
      throw std::runtime_error("pullback metric needs a GATE checkpoint");
    const std::size_t dim = ck->model.config().latent_width();
    if (point_text.empty()) {
      const eval::RunConfig cfg = ck->metadata.at("run_config").get<eval::RunConfig>();
      const eval::TaskPair pair = eval::load_pair(cfg);
      const train::LabeledSet one = eval::labeled(pair.target, {0});
      const ad::Matrix z = ck->model.latents(task, nn::GraphBatch::from(one.graphs.front()));
      x = z.row(0).transpose();
    } else {
      const auto p = parse_point(point_text);
      x = Eigen::Map<const geo::Vec>(p.data(), static_cast<Eigen::Index>(p.size()));
    }
    if (static_cast<std::size_t>(x.size()) != dim)
      throw std::runtime_error("pullback point must have " + std::to_string(dim) + " coordinates");
    const geo::VectorMap f = geo::transfer_map(ck->model, task);
    field = {"pullback", dim, [f, h](const geo::Vec& z) { return geo::pullback_metric(f, z, h); }};
  } else {
    throw CLI::ValidationError("--metric", "expected euclidean, sphere or pullback");
  }

  const geo::Mat g = field(x);
  json residuals = {{"metric_symmetry", geo::symmetry_residual(g)},
                    {"min_leading_minor", geo::min_leading_minor(g)},
                    {"flatness", geo::flatness_residual(g)}};
  json out = {{"metric", field.name}, {"point", std::vector<double>(x.data(), x.data() + x.size())}};
  std::optional<geo::ChristoffelResult> cr;
  try {
    cr = geo::christoffel(field, x, h);
  } catch (const geo::LinearAlgebraError& e) {
    // singular or ill-conditioned: the metric itself is still worth reporting
    out["christoffel"] = nullptr;
    out["christoffel_error"] = e.what();
    residuals["condition"] = std::isfinite(e.condition()) ? json(e.condition()) : json("inf");
    out["residuals"] = residuals;
    std::cout << std::setprecision(17) << out.dump(2) << "\n";
    return 1;
  }
  const std::size_t d = field.dim;
  json gamma = json::array();
  double lower_asym = 0.0;
  for (std::size_t l = 0; l < d; ++l) {
    json plane = json::array();
    for (std::size_t m = 0; m < d; ++m) {
      json row = json::array();
      for (std::size_t n = 0; n < d; ++n) {
        row.push_back(cr->gamma(l, m, n));
        lower_asym = std::max(lower_asym, std::abs(cr->gamma(l, m, n) - cr->gamma(l, n, m)));
      }
      plane.push_back(row);
    }
    gamma.push_back(plane);
  }
  residuals["christoffel_lower_symmetry"] = lower_asym;
  residuals["condition"] = cr->condition;
  residuals["max_abs_christoffel"] = cr->gamma.max_abs();
  out["christoffel"] = gamma;
  out["residuals"] = residuals;
  std::cout << std::setprecision(17) << out.dump(2) << "\n";
  return 0;
}

int run_report(const Common& c, const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<eval::MetricsReport> reports;
  if (inputs.empty()) {
    const eval::RunConfig cfg = resolve(c);
    const eval::TaskPair pair = eval::load_pair(cfg);
    const data::SplitManifest m = manifest_for(pair, cfg);
    for (auto kind : {nn::ModelKind::Gate, nn::ModelKind::Stl, nn::ModelKind::Mtl}) {
      std::cerr << "cross-validating " << nn::to_string(kind) << "\n";
      reports.push_back(eval::cross_validate(kind, pair, m, cfg));
    }
  } else {
    for (const auto& path : inputs) reports.push_back(eval::metrics_report_from_json(read_json(path)));
  }
  eval::attach_relative_rmse(reports);
  const json table = eval::relative_table(reports);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (const auto& r : reports) write_json(fs::path(out_dir) / (r.method + ".json"), eval::to_json(r));
    write_text(fs::path(out_dir) / "folds.csv", eval::to_csv(reports));
    write_json(fs::path(out_dir) / "relative.json", table);
  }
  std::cout << table.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GATE: geometrically aligned transfer encoder for molecular property regression"};
  app.require_subcommand(1);

  Common synth_c, split_c, corrupt_c, train_c, eval_c, ablate_c, pca_c, geo_c, report_c;

  auto* synth = app.add_subcommand("synth", "Write a synthetic correlated target/source CSV pair");
  add_common(synth, synth_c);
  std::optional<double> rho, noise, fraction;
  std::optional<std::size_t> n_target, n_source;
  std::string synth_out = ".";
  synth->add_option("--rho", rho, "Task correlation")->check(CLI::Range(-1.0, 1.0));
  synth->add_option("--n-target", n_target, "Target molecules");
  synth->add_option("--n-source", n_source, "Source molecules");
  synth->add_option("--noise", noise, "Label noise standard deviation");
  synth->add_option("--out-dir", synth_out, "Output directory");

  auto* split = app.add_subcommand("split", "Write a train/test/fold manifest");
  add_common(split, split_c);
  std::string split_data, split_mode, split_out = "manifest.json";
  split->add_option("--data", split_data, "CSV (default: synthetic target)")->check(CLI::ExistingFile);
  split->add_option("--mode", split_mode, "random or scaffold")
      ->check(CLI::IsMember({"random", "scaffold"}));
  split->add_option("--out", split_out, "Manifest path");

  auto* corrupt = app.add_subcommand("corrupt", "Corrupt labels outside one standard deviation");
  add_common(corrupt, corrupt_c);
  std::string corrupt_data, corrupt_manifest, corrupt_manifest_out, corrupt_out = "corrupted.csv";
  corrupt->add_option("--data", corrupt_data, "Input CSV")->required()->check(CLI::ExistingFile);
  corrupt->add_option("--fraction", fraction, "Fraction of eligible records")->check(CLI::Range(0.0, 1.0));
  corrupt->add_option("--manifest", corrupt_manifest, "Restrict to training records; records indices")
      ->check(CLI::ExistingFile);
  corrupt->add_option("--manifest-out", corrupt_manifest_out, "Updated manifest (default: in place)");
  corrupt->add_option("--out", corrupt_out, "Output CSV");

  auto* trn = app.add_subcommand("train", "Train one model and write a checkpoint");
  add_common(trn, train_c);
  std::string method, train_out = "model.ckpt", curves;
  trn->add_option("method", method, "gate, stl or mtl")->required()->check(CLI::IsMember({"gate", "stl", "mtl"}));
  trn->add_option("--out", train_out, "Checkpoint path");
  trn->add_option("--curves", curves, "Per-epoch metrics as NDJSON");

  auto* ev = app.add_subcommand("eval", "Re-evaluate a checkpoint on its validation and test sets");
  add_common(ev, eval_c);
  std::string eval_ckpt;
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Loss ablation with per-epoch curves");
  add_common(ablate, ablate_c);
  std::string ablate_out = "ablation";
  ablate->add_option("--out-dir", ablate_out, "Output directory");

  auto* pca = app.add_subcommand("pca", "PCA of latent representations from a checkpoint");
  add_common(pca, pca_c);
  std::string pca_ckpt, pca_out = "pca";
  std::size_t pca_k = 2;
  pca->add_option("--checkpoint", pca_ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  pca->add_option("--k", pca_k, "Components")->check(CLI::PositiveNumber);
  pca->add_option("--out-dir", pca_out, "Output directory");

  auto* geo_cmd = app.add_subcommand("geo-check", "Christoffel symbols and metric diagnostics at a point");
  add_common(geo_cmd, geo_c);
  std::string geo_metric = "sphere", geo_point, geo_ckpt;
  std::size_t geo_task = 0;
  double geo_h = 1e-5;
  geo_cmd->add_option("--metric", geo_metric, "euclidean, sphere or pullback")
      ->check(CLI::IsMember({"euclidean", "sphere", "pullback"}));
  geo_cmd->add_option("--point", geo_point, "Comma-separated coordinates");
  geo_cmd->add_option("--checkpoint", geo_ckpt, "GATE checkpoint for the pullback metric")
      ->check(CLI::ExistingFile);
  geo_cmd->add_option("--task", geo_task, "Transfer network of this task")->check(CLI::Range(0, 1));
  geo_cmd->add_option("--fd-step", geo_h, "Finite-difference step")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Cross-validate GATE/STL/MTL or tabulate saved reports");
  add_common(report, report_c);
  std::vector<std::string> report_in;
  std::string report_out;
  report->add_option("--in", report_in, "Saved MetricsReport JSON files")->check(CLI::ExistingFile);
  report->add_option("--out-dir", report_out, "Write reports, folds.csv and relative.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(synth_c, rho, n_target, n_source, noise, synth_out);
    if (*split) return run_split(split_c, split_data, split_mode, split_out);
    if (*corrupt)
      return run_corrupt(corrupt_c, corrupt_data, fraction, corrupt_manifest, corrupt_manifest_out,
                         corrupt_out);
    if (*trn) return run_train(train_c, method, train_out, curves);
    if (*ev) return run_eval(eval_ckpt);
    if (*ablate) return run_ablate(ablate_c, ablate_out);
    if (*pca) return run_pca(pca_ckpt, pca_k, pca_out);
    if (*geo_cmd) return run_geo_check(geo_metric, geo_point, geo_ckpt, geo_task, geo_h);
    if (*report) return run_report(report_c, report_in, report_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
