#include "gate/networks.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gate::nn {

using nlohmann::json;

namespace {

void check_mlp(const MlpSpec& s, const char* name) {
  if (s.widths.size() < 2)
    throw ConfigError(std::string(name) + ": an MLP needs at least two widths");
  for (std::size_t w : s.widths)
    if (w == 0) throw ConfigError(std::string(name) + ": widths must be positive");
  if (!(s.dropout >= 0.0 && s.dropout < 1.0))
    throw ConfigError(std::string(name) + ": dropout must lie in [0, 1)");
}

void check_dmpnn(const DmpnnSpec& s, const char* name) {
  if (s.node_in == 0 || s.edge_in == 0 || s.hidden == 0 || s.out == 0 || s.depth == 0)
    throw ConfigError(std::string(name) + ": widths and depth must be positive");
}

void expect_width(std::size_t got, std::size_t want, const std::string& what) {
  if (got != want)
    throw ConfigError(what + ": expected width " + std::to_string(want) + ", got " +
                      std::to_string(got));
}

std::size_t quarter(std::size_t w) { return std::max<std::size_t>(8, w / 4); }

}  // namespace

void NetworkConfig::validate() const {
  check_dmpnn(embedding, "embedding");
  check_dmpnn(backbone, "backbone");
  check_mlp(bottleneck, "bottleneck");
  check_mlp(transfer, "transfer");
  check_mlp(inverse, "inverse");
  check_mlp(head, "head");
  expect_width(embedding.node_in, chem::kNodeFeatureWidth, "embedding node input");
  expect_width(embedding.edge_in, chem::kEdgeFeatureWidth, "embedding edge input");
  expect_width(backbone.node_in, embedding.out, "backbone node input");
  expect_width(backbone.edge_in, embedding.hidden, "backbone edge input");
  expect_width(bottleneck.widths.front(), backbone.out, "bottleneck input");
  const std::size_t latent = bottleneck.widths.back();
  expect_width(transfer.widths.front(), latent, "transfer input");
  expect_width(transfer.widths.back(), latent, "transfer output");
  expect_width(inverse.widths.front(), latent, "inverse transfer input");
  expect_width(inverse.widths.back(), latent, "inverse transfer output");
  expect_width(head.widths.front(), latent, "head input");
  expect_width(head.widths.back(), 1, "head output");
}

NetworkConfig NetworkConfig::published() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::quartered() {
  NetworkConfig c;
  auto q = [](std::vector<std::size_t> w) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) w[i] = quarter(w[i]);
    return w;
  };
  c.embedding.hidden = quarter(c.embedding.hidden);
  c.embedding.out = quarter(c.embedding.out);
  c.backbone.node_in = c.embedding.out;
  c.backbone.edge_in = c.embedding.hidden;
  c.backbone.hidden = quarter(c.backbone.hidden);
  c.backbone.out = quarter(c.backbone.out);
  const std::size_t latent = quarter(c.latent_width());
  c.bottleneck.widths = {c.backbone.out, quarter(c.bottleneck.widths[1]), latent};
  c.transfer.widths = q(c.transfer.widths);
  c.transfer.widths.back() = latent;
  c.inverse.widths = q(c.inverse.widths);
  c.inverse.widths.back() = latent;
  c.head.widths = q(c.head.widths);
  return c;
}

NetworkConfig NetworkConfig::tiny(std::size_t hidden, std::size_t latent) {
  NetworkConfig c;
  c.embedding = {chem::kNodeFeatureWidth, chem::kEdgeFeatureWidth, hidden, hidden, 2};
  c.backbone = {hidden, hidden, hidden, hidden, 2};
  c.bottleneck = {{hidden, latent, latent}, 0.0};
  c.transfer = {{latent, hidden, latent}, 0.2};
  c.inverse = {{latent, hidden, latent}, 0.2};
  c.head = {{latent, hidden, 1}, 0.2};
  return c;
}

namespace {
void dmpnn_to_json(json& j, const DmpnnSpec& s) {
  j = json{{"node_in", s.node_in}, {"edge_in", s.edge_in}, {"hidden", s.hidden},
           {"out", s.out}, {"depth", s.depth}};
}
void dmpnn_from_json(const json& j, DmpnnSpec& s) {
  s.node_in = j.value("node_in", s.node_in);
  s.edge_in = j.value("edge_in", s.edge_in);
  s.hidden = j.value("hidden", s.hidden);
  s.out = j.value("out", s.out);
  s.depth = j.value("depth", s.depth);
}
void mlp_to_json(json& j, const MlpSpec& s) { j = json{{"widths", s.widths}, {"dropout", s.dropout}}; }
void mlp_from_json(const json& j, MlpSpec& s) {
  s.widths = j.value("widths", s.widths);
  s.dropout = j.value("dropout", s.dropout);
}
}  // namespace

void to_json(json& j, const NetworkConfig& c) {
  j = json::object();
  dmpnn_to_json(j["embedding"], c.embedding);
  dmpnn_to_json(j["backbone"], c.backbone);
  mlp_to_json(j["bottleneck"], c.bottleneck);
  mlp_to_json(j["transfer"], c.transfer);
  mlp_to_json(j["inverse"], c.inverse);
  mlp_to_json(j["head"], c.head);
}

void from_json(const json& j, NetworkConfig& c) {
  if (j.contains("embedding")) dmpnn_from_json(j["embedding"], c.embedding);
  if (j.contains("backbone")) dmpnn_from_json(j["backbone"], c.backbone);
  if (j.contains("bottleneck")) mlp_from_json(j["bottleneck"], c.bottleneck);
  if (j.contains("transfer")) mlp_from_json(j["transfer"], c.transfer);
  if (j.contains("inverse")) mlp_from_json(j["inverse"], c.inverse);
  if (j.contains("head")) mlp_from_json(j["head"], c.head);
}

// ---- Mlp --------------------------------------------------------------------

Mlp::Mlp(const MlpSpec& spec, std::mt19937_64& rng, const std::string& prefix) : spec_(spec) {
  check_mlp(spec, prefix.c_str());
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const std::string tag = prefix + "." + std::to_string(l);
    weights_.emplace_back(tag + ".w", xavier_uniform(spec.widths[l], spec.widths[l + 1], rng));
    biases_.emplace_back(tag + ".b",
                         ad::Matrix::Zero(1, static_cast<Eigen::Index>(spec.widths[l + 1])));
  }
}

ad::Value Mlp::forward(ad::Tape& tape, ad::Value x, std::mt19937_64& rng, bool training) {
  if (empty()) throw ConfigError("Mlp::forward on an unconstructed network");
  if (x.cols() != in_width())
    throw ConfigError("Mlp input width " + std::to_string(x.cols()) + " != " +
                      std::to_string(in_width()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    x = ad::add_bias(ad::matmul(x, tape.param(weights_[l])), tape.param(biases_[l]));
    if (l + 1 < weights_.size()) {
      x = ad::relu(x);
      x = ad::dropout(x, spec_.dropout, rng, training);
    }
  }
  return x;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

ad::Value Encoder::forward(ad::Tape& tape, const GraphBatch& batch, const GraphRepr& a,
                           std::mt19937_64& rng, bool training) {
  GraphRepr h = backbone.forward(tape, batch, a.node_states, a.edge_states);
  return bottleneck.forward(tape, h.pooled, rng, training);
}

std::vector<ad::Parameter*> Encoder::parameters() {
  std::vector<ad::Parameter*> out;
  if (bottleneck.empty()) return out;
  out = backbone.parameters();
  for (auto* p : bottleneck.parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> TaskNetworks::parameters() {
  std::vector<ad::Parameter*> out = encoder.parameters();
  for (Mlp* m : {&transfer, &inverse, &head})
    for (auto* p : m->parameters()) out.push_back(p);
  return out;
}

// ---- perturbation ------------------------------------------------------------

void PerturbConfig::validate() const {
  if (count < 1) throw ConfigError("perturbation count must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("perturbation sigma must be > 0");
}

void to_json(json& j, const PerturbConfig& c) {
  j = json{{"count", c.count}, {"sigma", c.sigma}, {"seed", c.seed}};
}
void from_json(const json& j, PerturbConfig& c) {
  c.count = j.value("count", c.count);
  c.sigma = j.value("sigma", c.sigma);
  c.seed = j.value("seed", c.seed);
}

namespace {
ad::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}
}  // namespace

std::vector<GraphRepr> perturb(const GraphRepr& a, const GraphBatch& batch,
                               const PerturbConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ad::Tape& tape = *a.node_states.tape();
  const auto rows = static_cast<Eigen::Index>(a.node_states.rows());
  const auto cols = static_cast<Eigen::Index>(a.node_states.cols());
  std::vector<GraphRepr> out;
  out.reserve(cfg.count);
  for (std::size_t j = 0; j < cfg.count; ++j) {
    ad::Value noise = tape.constant(gaussian(rows, cols, cfg.sigma, rng));
    ad::Value nodes = ad::add(a.node_states, noise);
    ad::Value pooled = ad::scatter_add_rows(nodes, batch.node_graph, batch.num_graphs);
    out.push_back({nodes, a.edge_states, pooled});
  }
  return out;
}

std::vector<GraphRepr> perturb(const GraphRepr& a, const GraphBatch& batch,
                               const PerturbConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return perturb(a, batch, cfg, rng);
}

StackedRepr perturb_stacked(const GraphRepr& a, const GraphBatch& batch,
                            const PerturbConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ad::Tape& tape = *a.node_states.tape();
  const auto& x = a.node_states.data();
  const std::size_t copies = cfg.count + 1;
  StackedRepr s;
  s.copies = copies;
  s.batch = batch.tiled(copies);

  ad::Matrix noise = ad::Matrix::Zero(x.rows() * static_cast<Eigen::Index>(copies), x.cols());
  noise.bottomRows(x.rows() * static_cast<Eigen::Index>(cfg.count)) =
      gaussian(x.rows() * static_cast<Eigen::Index>(cfg.count), x.cols(), cfg.sigma, rng);

  std::vector<int> node_tile, edge_tile;
  node_tile.reserve(s.batch.num_nodes);
  edge_tile.reserve(s.batch.num_edges());
  for (std::size_t r = 0; r < copies; ++r) {
    for (std::size_t i = 0; i < batch.num_nodes; ++i) node_tile.push_back(static_cast<int>(i));
    for (std::size_t e = 0; e < batch.num_edges(); ++e) edge_tile.push_back(static_cast<int>(e));
  }
  ad::Value nodes = ad::add(ad::gather_rows(a.node_states, node_tile), tape.constant(std::move(noise)));
  ad::Value edges = ad::gather_rows(a.edge_states, edge_tile);
  ad::Value pooled = ad::scatter_add_rows(nodes, s.batch.node_graph, s.batch.num_graphs);
  s.repr = {nodes, edges, pooled};
  return s;
}

// ---- Model ------------------------------------------------------------------

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Gate: return "gate";
    case ModelKind::Stl: return "stl";
    case ModelKind::Mtl: return "mtl";
  }
  return "gate";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "gate") return ModelKind::Gate;
  if (s == "stl") return ModelKind::Stl;
  if (s == "mtl") return ModelKind::Mtl;
  throw ConfigError("unknown model kind '" + s + "' (expected gate, stl or mtl)");
}

Model::Model(ModelKind kind, const NetworkConfig& config, std::uint64_t seed)
    : kind_(kind), config_(config), seed_(seed) {
  config_.validate();
  std::mt19937_64 rng(seed);
  embedding_ = Dmpnn(config_.embedding, rng, "embedding");
  const std::size_t n_tasks = kind == ModelKind::Stl ? 1 : 2;
  tasks_.resize(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const std::string p = "task" + std::to_string(t);
    TaskNetworks& net = tasks_[t];
    if (t == 0 || kind == ModelKind::Gate) {
      net.encoder.backbone = Dmpnn(config_.backbone, rng, p + ".backbone");
      net.encoder.bottleneck = Mlp(config_.bottleneck, rng, p + ".bottleneck");
    }
    if (kind == ModelKind::Gate) {
      net.transfer = Mlp(config_.transfer, rng, p + ".transfer");
      net.inverse = Mlp(config_.inverse, rng, p + ".inverse");
    }
    net.head = Mlp(config_.head, rng, p + ".head");
  }
}

GraphRepr Model::embed(ad::Tape& tape, const GraphBatch& batch) {
  return embedding_.forward(tape, batch);
}

Encoder& Model::encoder(std::size_t task) {
  if (kind_ == ModelKind::Mtl) return tasks_.at(0).encoder;
  return tasks_.at(task).encoder;
}

ad::Value Model::encode(ad::Tape& tape, std::size_t task, const GraphBatch& batch,
                        const GraphRepr& a, std::mt19937_64& rng, bool training) {
  return encoder(task).forward(tape, batch, a, rng, training);
}

ad::Value Model::transfer(ad::Tape& tape, std::size_t task, ad::Value z, std::mt19937_64& rng,
                          bool training) {
  return tasks_.at(task).transfer.forward(tape, z, rng, training);
}

ad::Value Model::inverse_transfer(ad::Tape& tape, std::size_t task, ad::Value m,
                                  std::mt19937_64& rng, bool training) {
  return tasks_.at(task).inverse.forward(tape, m, rng, training);
}

ad::Value Model::predict(ad::Tape& tape, std::size_t task, ad::Value z, std::mt19937_64& rng,
                         bool training) {
  return tasks_.at(task).head.forward(tape, z, rng, training);
}

std::vector<double> Model::predict_batch(std::size_t task, const GraphBatch& batch) {
  ad::Tape tape;
  std::mt19937_64 rng(0);
  GraphRepr a = embed(tape, batch);
  ad::Value z = encode(tape, task, batch, a, rng, false);
  ad::Value y = predict(tape, task, z, rng, false);
  const auto& m = y.data();
  return std::vector<double>(m.data(), m.data() + m.size());
}

ad::Matrix Model::latents(std::size_t task, const GraphBatch& batch) {
  ad::Tape tape;
  std::mt19937_64 rng(0);
  GraphRepr a = embed(tape, batch);
  return encode(tape, task, batch, a, rng, false).data();
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out = embedding_.parameters();
  for (auto& t : tasks_)
    for (auto* p : t.parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---- checkpoints --------------------------------------------------------------

namespace {

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const Model& model, const json& metadata) {
  json header;
  header["format"] = "gate-checkpoint";
  header["version"] = 1;
  header["kind"] = to_string(model.kind());
  header["config"] = model.config();
  header["seed"] = model.seed();
  json shapes = json::array();
  for (const auto* p : model.parameters())
    shapes.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["parameters"] = shapes;
  header["metadata"] = metadata;
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto* p : model.parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) append_le(out, p->value.data()[i]);
  return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const json& metadata) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const std::string bytes = serialize_checkpoint(model, metadata);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw std::runtime_error("checkpoint: missing JSON header");
  const json header = json::parse(bytes.substr(0, nl));
  if (header.value("format", "") != "gate-checkpoint")
    throw std::runtime_error("checkpoint: unrecognized format");
  NetworkConfig cfg = header.at("config").get<NetworkConfig>();
  LoadedCheckpoint out{Model(model_kind_from_string(header.at("kind")), cfg,
                             header.at("seed").get<std::uint64_t>()),
                       header.value("metadata", json::object())};
  auto params = out.model.parameters();
  const json& shapes = header.at("parameters");
  if (shapes.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  std::size_t pos = nl + 1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    if (shapes[k].at("name") != p.name || shapes[k].at("rows") != p.value.rows() ||
        shapes[k].at("cols") != p.value.cols())
      throw std::runtime_error("checkpoint: shape mismatch at parameter " + p.name);
    const auto n = static_cast<std::size_t>(p.value.size());
    if (pos + 8 * n > bytes.size()) throw std::runtime_error("checkpoint: truncated blob");
    for (std::size_t i = 0; i < n; ++i) p.value.data()[i] = read_le(bytes.data() + pos + 8 * i);
    pos += 8 * n;
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes after blob");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace gate::nn
