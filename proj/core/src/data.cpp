#include "gate/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "gate/smiles.hpp"

namespace gate::data {

using nlohmann::json;

LoadError::LoadError(const std::string& what, std::size_t line)
    : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

std::vector<double> Dataset::values() const {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.value);
  return v;
}

std::vector<std::string> Dataset::smiles() const {
  std::vector<std::string> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.smiles);
  return v;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.name = name;
  d.stats = stats;
  d.records.reserve(indices.size());
  for (std::size_t i : indices) d.records.push_back(records.at(i));
  return d;
}

// ---- CSV ----------------------------------------------------------------------

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

}  // namespace

LoadResult read_csv(std::istream& in, const std::string& name) {
  LoadResult out;
  out.dataset.name = name;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw LoadError("missing header \"smiles,value\"", 1);
  ++lineno;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (trim(line) != "smiles,value") throw LoadError("expected header \"smiles,value\"", lineno);
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw LoadError("expected two comma-separated fields", lineno);
    Record r{trim(line.substr(0, comma)), 0.0};
    const auto v = parse_double(trim(line.substr(comma + 1)));
    if (!v || !std::isfinite(*v)) throw LoadError("non-numeric value", lineno);
    r.value = *v;
    try {
      (void)chem::parse_smiles(r.smiles);
    } catch (const chem::ParseError&) {
      ++out.dropped;
      continue;
    }
    out.dataset.records.push_back(std::move(r));
  }
  return out;
}

LoadResult load_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("cannot open " + path.string(), 0);
  auto res = read_csv(f, path.stem().string());
  if (res.dropped > 0)
    std::cerr << path.string() << ": dropped " << res.dropped << " unparseable rows\n";
  return res;
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "smiles,value\n" << std::setprecision(17);
  for (const auto& r : d.records) f << r.smiles << ',' << r.value << '\n';
}

// ---- normalization ------------------------------------------------------------

NormStats fit_normalization(const Dataset& d) {
  if (d.size() < 2) throw NormalizationError("normalization needs at least two records");
  double mu = 0.0;
  for (const auto& r : d.records) mu += r.value;
  mu /= static_cast<double>(d.size());
  double var = 0.0;
  for (const auto& r : d.records) var += (r.value - mu) * (r.value - mu);
  var /= static_cast<double>(d.size());
  if (!(var > 0.0)) throw NormalizationError("zero variance in '" + d.name + "'");
  return {mu, std::sqrt(var)};
}

Dataset apply_normalization(const Dataset& d, const NormStats& stats) {
  if (!(stats.std > 0.0)) throw NormalizationError("normalization std must be positive");
  Dataset out = d;
  for (auto& r : out.records) r.value = (r.value - stats.mean) / stats.std;
  out.stats = stats;
  return out;
}

std::pair<Dataset, NormStats> normalize(const Dataset& d) {
  const NormStats s = fit_normalization(d);
  return {apply_normalization(d, s), s};
}

double denormalize(double normalized, const NormStats& stats) {
  return normalized * stats.std + stats.mean;
}

void to_json(json& j, const NormStats& s) { j = {{"mean", s.mean}, {"std", s.std}}; }
void from_json(const json& j, NormStats& s) {
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
}

// ---- splits --------------------------------------------------------------------

std::vector<std::size_t> SplitManifest::test_indices() const {
  std::vector<std::size_t> v;
  for (const auto& a : assignments)
    if (a.role == Role::Test) v.push_back(a.index);
  return v;
}

std::vector<std::size_t> SplitManifest::train_indices() const {
  std::vector<std::size_t> v;
  for (const auto& a : assignments)
    if (a.role == Role::Train) v.push_back(a.index);
  return v;
}

std::vector<std::size_t> SplitManifest::fold_indices(int fold) const {
  std::vector<std::size_t> v;
  for (const auto& a : assignments)
    if (a.role == Role::Train && a.fold == fold) v.push_back(a.index);
  return v;
}

std::size_t SplitManifest::fold_count() const {
  std::set<int> folds;
  for (const auto& a : assignments)
    if (a.role == Role::Train) folds.insert(a.fold);
  return folds.size();
}

std::string to_string(SplitMode m) { return m == SplitMode::Random ? "random" : "scaffold"; }

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "random") return SplitMode::Random;
  if (s == "scaffold") return SplitMode::Scaffold;
  throw SplitError("unknown split mode '" + s + "' (expected random or scaffold)");
}

void to_json(json& j, const SplitManifest& m) {
  json assignments = json::array();
  for (const auto& a : m.assignments)
    assignments.push_back({{"index", a.index},
                           {"fold", a.fold},
                           {"role", a.role == Role::Train ? "train" : "test"}});
  j = {{"name", m.name},
       {"mode", to_string(m.mode)},
       {"seed", m.seed},
       {"assignments", assignments},
       {"corrupted", m.corrupted}};
}

void from_json(const json& j, SplitManifest& m) {
  m.name = j.value("name", "");
  m.mode = split_mode_from_string(j.at("mode"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.assignments.clear();
  for (const auto& a : j.at("assignments")) {
    const std::string role = a.at("role");
    if (role != "train" && role != "test") throw SplitError("manifest: unknown role " + role);
    m.assignments.push_back({a.at("index").get<std::size_t>(), a.at("fold").get<int>(),
                             role == "train" ? Role::Train : Role::Test});
  }
  m.corrupted = j.value("corrupted", std::vector<std::size_t>{});
}

namespace {

std::size_t test_count(std::size_t n) {
  return static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(n)));
}

void require_size(const Dataset& d) {
  if (d.size() < 10)
    throw SplitError("splitting needs at least 10 records, '" + d.name + "' has " +
                     std::to_string(d.size()));
}

}  // namespace

SplitManifest split_random(const Dataset& d, std::uint64_t seed) {
  require_size(d);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  SplitManifest m{d.name, SplitMode::Random, seed, {}, {}};
  m.assignments.resize(d.size());
  const std::size_t n_test = test_count(d.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    Assignment& a = m.assignments[order[k]];
    a.index = order[k];
    if (k < n_test) {
      a.role = Role::Test;
      a.fold = -1;
    } else {
      a.role = Role::Train;
      a.fold = static_cast<int>((k - n_test) % kFolds);
    }
  }
  return m;
}

SplitManifest split_scaffold(const Dataset& d, std::uint64_t seed) {
  require_size(d);
  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < d.size(); ++i)
    by_key[chem::scaffold_key(chem::parse_smiles(d.records[i].smiles))].push_back(i);
  if (by_key.size() < kFolds + 1)
    throw SplitError("only " + std::to_string(by_key.size()) +
                     " scaffold groups; need at least " + std::to_string(kFolds + 1) +
                     " for test + folds (use random mode)");

  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, members] : by_key) groups.push_back(std::move(members));
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::stable_sort(groups.begin(), groups.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });

  // bin 0 = test, bins 1..kFolds = folds; equal 20% targets
  const double target = static_cast<double>(d.size()) / static_cast<double>(kFolds + 1);
  std::vector<double> fill(kFolds + 1, 0.0);
  SplitManifest m{d.name, SplitMode::Scaffold, seed, {}, {}};
  m.assignments.resize(d.size());
  for (const auto& g : groups) {
    std::size_t bin = 0;
    double best_deficit = -1e300;
    for (std::size_t b = 0; b < fill.size(); ++b) {
      const double deficit = target - fill[b];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        bin = b;
      }
    }
    fill[bin] += static_cast<double>(g.size());
    for (std::size_t i : g) {
      m.assignments[i].index = i;
      m.assignments[i].role = bin == 0 ? Role::Test : Role::Train;
      m.assignments[i].fold = bin == 0 ? -1 : static_cast<int>(bin - 1);
    }
  }
  return m;
}

SplitManifest make_split(const Dataset& d, SplitMode mode, std::uint64_t seed) {
  return mode == SplitMode::Random ? split_random(d, seed) : split_scaffold(d, seed);
}

// ---- corruption -------------------------------------------------------------------

Corruption corrupt(const Dataset& normalized, std::uint64_t seed, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("corruption fraction must lie in [0, 1]");
  Corruption out{normalized, {}, {}};
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < normalized.size(); ++i)
    if (std::abs(normalized.records[i].value) > 1.0) candidates.push_back(i);
  if (candidates.empty()) {
    std::cerr << "warning: no corruption candidates (|value| > 1) in '" << normalized.name << "'\n";
    return out;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto keep = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(candidates.size())));
  candidates.resize(keep);
  std::sort(candidates.begin(), candidates.end());
  for (std::size_t i : candidates) {
    double& v = out.dataset.records[i].value;
    out.indices.push_back(i);
    out.original.push_back(v);
    v = v > 0.0 ? -2.0 : 2.0;
  }
  return out;
}

// ---- synthetic pairs ---------------------------------------------------------------

void to_json(json& j, const SynthConfig& c) {
  j = {{"n_target", c.n_target}, {"n_source", c.n_source}, {"rho", c.rho},
       {"noise", c.noise},       {"seed", c.seed}};
}
void from_json(const json& j, SynthConfig& c) {
  c.n_target = j.value("n_target", c.n_target);
  c.n_source = j.value("n_source", c.n_source);
  c.rho = j.value("rho", c.rho);
  c.noise = j.value("noise", c.noise);
  c.seed = j.value("seed", c.seed);
}

std::string random_smiles(std::mt19937_64& rng) {
  static const char* const rings[] = {"c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCNCC1",
                                      "C1CC1",    "C1CCOC1",  "c1ccoc1",  "c1ccsc1"};
  static const char* const branches[] = {"(C)", "(O)", "(F)", "(Cl)", "(N)", "(=O)"};
  static const char chain_atoms[] = {'C', 'C', 'C', 'C', 'N', 'O'};
  std::uniform_int_distribution<int> units(1, 3), chain_len(1, 4);
  std::uniform_int_distribution<std::size_t> ring_pick(0, std::size(rings) - 1),
      branch_pick(0, std::size(branches) - 1), atom_pick(0, std::size(chain_atoms) - 1);
  std::bernoulli_distribution is_ring(0.45), has_branch(0.25);

  std::string s;
  const int n_units = units(rng);
  for (int u = 0; u < n_units; ++u) {
    if (is_ring(rng)) {
      s += rings[ring_pick(rng)];
      continue;
    }
    const int len = chain_len(rng);
    for (int k = 0; k < len; ++k) {
      const char a = chain_atoms[atom_pick(rng)];
      s += a;
      if (a == 'O' || !has_branch(rng)) continue;
      std::string br = branches[branch_pick(rng)];
      if (a != 'C' && br == "(=O)") br = "(C)";
      s += br;
    }
  }
  return s;
}

std::vector<std::string> random_molecules(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (out.size() < n) {
    std::string s = random_smiles(rng);
    ++attempts;
    try {
      (void)chem::parse_smiles(s);
    } catch (const chem::ParseError&) {
      continue;
    }
    // duplicates are admitted only once the grammar runs out of fresh strings
    if (seen.insert(s).second || attempts > 50 * n) out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> latent_descriptor(const std::vector<std::string>& smiles) {
  const std::size_t n = smiles.size();
  std::vector<std::array<double, 3>> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const chem::MolGraph g = chem::parse_smiles(smiles[i]);
    double hetero = 0.0;
    for (const auto& a : g.atoms) hetero += a.element != chem::Element::C ? 1.0 : 0.0;
    const double atoms = static_cast<double>(g.num_atoms());
    raw[i] = {atoms, static_cast<double>(g.num_bonds()) - atoms + 1.0, hetero / atoms};
  }
  std::vector<double> u(n, 0.0);
  if (n == 0) return u;
  for (std::size_t f = 0; f < 3; ++f) {
    double mu = 0.0, var = 0.0;
    for (const auto& r : raw) mu += r[f];
    mu /= static_cast<double>(n);
    for (const auto& r : raw) var += (r[f] - mu) * (r[f] - mu);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) u[i] += sd > 0.0 ? (raw[i][f] - mu) / sd : 0.0;
  }
  double mu = 0.0, var = 0.0;
  for (double x : u) mu += x;
  mu /= static_cast<double>(n);
  for (double x : u) var += (x - mu) * (x - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (double& x : u) x = sd > 0.0 ? (x - mu) / sd : 0.0;
  return u;
}

PairLabels synth_labels(const std::vector<std::string>& smiles, double rho, double noise,
                        std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
  if (!(noise >= 0.0)) throw std::invalid_argument("noise must be non-negative");
  const std::vector<double> u = latent_descriptor(smiles);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const double mix = std::sqrt(1.0 - rho * rho);
  PairLabels out;
  out.target.reserve(u.size());
  out.source.reserve(u.size());
  for (double ui : u) {
    const double w = std_normal(rng);
    const double et = std_normal(rng) * noise;
    const double es = std_normal(rng) * noise;
    out.target.push_back(ui + et);
    out.source.push_back(rho * ui + mix * w + es);
  }
  return out;
}

std::pair<Dataset, Dataset> synth_pair(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const auto pool = random_molecules(cfg.n_target + cfg.n_source, rng);
  const PairLabels labels = synth_labels(pool, cfg.rho, cfg.noise, rng());
  Dataset target{"synthetic_target", {}, std::nullopt};
  Dataset source{"synthetic_source", {}, std::nullopt};
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i < cfg.n_target) target.records.push_back({pool[i], labels.target[i]});
    else source.records.push_back({pool[i], labels.source[i]});
  }
  return {target, source};
}

}  // namespace gate::data
