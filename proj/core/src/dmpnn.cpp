#include "gate/dmpnn.hpp"

#include <cmath>

namespace gate::nn {

GraphBatch GraphBatch::from(std::span<const chem::MolGraph* const> graphs) {
  GraphBatch b;
  std::size_t edges = 0;
  for (const auto* g : graphs) {
    b.num_nodes += g->num_atoms();
    edges += g->num_edges();
  }
  b.num_graphs = graphs.size();
  b.node_features.resize(static_cast<Eigen::Index>(b.num_nodes), chem::kNodeFeatureWidth);
  b.edge_features.resize(static_cast<Eigen::Index>(edges), chem::kEdgeFeatureWidth);
  b.edge_src.reserve(edges);
  b.edge_dst.reserve(edges);
  b.edge_rev.reserve(edges);
  b.node_graph.reserve(b.num_nodes);
  int node_off = 0, edge_off = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const chem::MolGraph& g = *graphs[gi];
    if (static_cast<std::size_t>(g.node_features.rows()) != g.num_atoms() ||
        static_cast<std::size_t>(g.edge_features.rows()) != g.num_edges())
      throw ad::DimensionError("GraphBatch: molecule " + std::to_string(gi) + " is not featurized");
    b.node_features.middleRows(node_off, g.node_features.rows()) = g.node_features;
    if (g.num_edges() > 0)
      b.edge_features.middleRows(edge_off, g.edge_features.rows()) = g.edge_features;
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      b.edge_src.push_back(g.edge_src[e] + node_off);
      b.edge_dst.push_back(g.edge_dst[e] + node_off);
      b.edge_rev.push_back(g.edge_rev[e] + edge_off);
    }
    for (std::size_t i = 0; i < g.num_atoms(); ++i) b.node_graph.push_back(static_cast<int>(gi));
    node_off += static_cast<int>(g.num_atoms());
    edge_off += static_cast<int>(g.num_edges());
  }
  return b;
}

GraphBatch GraphBatch::from(const chem::MolGraph& g) {
  const chem::MolGraph* one[] = {&g};
  return from(std::span<const chem::MolGraph* const>(one, 1));
}

GraphBatch GraphBatch::tiled(std::size_t copies) const {
  GraphBatch b;
  const int nn = static_cast<int>(num_nodes), ne = static_cast<int>(num_edges()),
            ng = static_cast<int>(num_graphs);
  b.num_nodes = num_nodes * copies;
  b.num_graphs = num_graphs * copies;
  b.node_features.resize(static_cast<Eigen::Index>(b.num_nodes), node_features.cols());
  b.edge_features.resize(static_cast<Eigen::Index>(num_edges() * copies), edge_features.cols());
  for (std::size_t r = 0; r < copies; ++r) {
    const int ro = static_cast<int>(r);
    b.node_features.middleRows(ro * nn, nn) = node_features;
    b.edge_features.middleRows(ro * ne, ne) = edge_features;
    for (int e = 0; e < ne; ++e) {
      b.edge_src.push_back(edge_src[e] + ro * nn);
      b.edge_dst.push_back(edge_dst[e] + ro * nn);
      b.edge_rev.push_back(edge_rev[e] + ro * ne);
    }
    for (int i = 0; i < nn; ++i) b.node_graph.push_back(node_graph[i] + ro * ng);
  }
  return b;
}

EdgeStates init_edges(const GraphBatch& batch, ad::Value node_in, ad::Value edge_in,
                      ad::Value w_in) {
  if (node_in.rows() != batch.num_nodes || edge_in.rows() != batch.num_edges())
    throw ad::DimensionError("init_edges: inputs do not match batch topology");
  if (node_in.cols() + edge_in.cols() != w_in.rows())
    throw ad::DimensionError("init_edges: feature width " +
                             std::to_string(node_in.cols() + edge_in.cols()) +
                             " does not match W_in " + w_in.shape().str());
  ad::Value x_src = ad::gather_rows(node_in, batch.edge_src);
  ad::Value h0 = ad::relu(ad::matmul(ad::concat(x_src, edge_in), w_in));
  return {h0, h0, 0};
}

EdgeStates message_step(const EdgeStates& s, const GraphBatch& batch, ad::Value w_edge) {
  // m_ij = (sum of edges entering i) - h_ji
  ad::Value into_node = ad::scatter_add_rows(s.current, batch.edge_dst, batch.num_nodes);
  ad::Value msg = ad::sub(ad::gather_rows(into_node, batch.edge_src),
                          ad::gather_rows(s.current, batch.edge_rev));
  ad::Value next = ad::relu(ad::add(s.initial, ad::matmul(msg, w_edge)));
  return {s.initial, next, s.steps + 1};
}

GraphRepr node_readout(const EdgeStates& s, const GraphBatch& batch, ad::Value node_in,
                       ad::Value w_node) {
  ad::Value m = ad::scatter_add_rows(s.current, batch.edge_dst, batch.num_nodes);
  if (node_in.cols() + m.cols() != w_node.rows())
    throw ad::DimensionError("node_readout: width does not match W_n " + w_node.shape().str());
  ad::Value h = ad::relu(ad::matmul(ad::concat(node_in, m), w_node));
  ad::Value pooled = ad::scatter_add_rows(h, batch.node_graph, batch.num_graphs);
  return {h, s.current, pooled};
}

ad::Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

Dmpnn::Dmpnn(const DmpnnSpec& spec, std::mt19937_64& rng, const std::string& prefix)
    : spec_(spec) {
  if (spec.node_in == 0 || spec.edge_in == 0 || spec.hidden == 0 || spec.out == 0 ||
      spec.depth == 0)
    throw ad::DimensionError("Dmpnn: all widths and depth must be positive");
  w_in = ad::Parameter(prefix + ".w_in", xavier_uniform(spec.node_in + spec.edge_in, spec.hidden, rng));
  w_edge = ad::Parameter(prefix + ".w_edge", xavier_uniform(spec.hidden, spec.hidden, rng));
  w_node = ad::Parameter(prefix + ".w_node", xavier_uniform(spec.node_in + spec.hidden, spec.out, rng));
}

GraphRepr Dmpnn::forward(ad::Tape& tape, const GraphBatch& batch, ad::Value node_in,
                         ad::Value edge_in) {
  ad::Value wi = tape.param(w_in), we = tape.param(w_edge), wn = tape.param(w_node);
  EdgeStates s = init_edges(batch, node_in, edge_in, wi);
  for (std::size_t t = 0; t < spec_.depth; ++t) s = message_step(s, batch, we);
  return node_readout(s, batch, node_in, wn);
}

GraphRepr Dmpnn::forward(ad::Tape& tape, const GraphBatch& batch) {
  return forward(tape, batch, tape.constant(batch.node_features),
                 tape.constant(batch.edge_features));
}

std::vector<ad::Parameter*> Dmpnn::parameters() { return {&w_in, &w_edge, &w_node}; }

}  // namespace gate::nn
