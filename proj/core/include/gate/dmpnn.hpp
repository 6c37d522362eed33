#pragma once

// Directional message passing over bond-directed hidden states.
//
//   h0_ij   = ReLU(concat(X_i, E_ij) W_in)
//   m_ij    = sum_{k in N(i) \ j} h_ki
//   h_ij'   = ReLU(h0_ij + m_ij W_e)                     (depth times)
//   m_i     = sum_{j in N(i)} h_ji                         (incoming edges)
//   h_i     = ReLU(concat(X_i, m_i) W_n)
//   pooled  = sum_i h_i                                    (per graph)
//
// Row-vector convention: every layer multiplies on the right.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gate/autodiff.hpp"
#include "gate/smiles.hpp"

namespace gate::nn {

/// Disjoint union of molecules. Node/edge ids are offset per molecule;
/// node_graph maps each node to its molecule index within the batch.
struct GraphBatch {
  std::vector<int> edge_src;
  std::vector<int> edge_dst;
  std::vector<int> edge_rev;
  std::vector<int> node_graph;
  std::size_t num_nodes = 0;
  std::size_t num_graphs = 0;
  ad::Matrix node_features;
  ad::Matrix edge_features;

  std::size_t num_edges() const { return edge_src.size(); }

  static GraphBatch from(std::span<const chem::MolGraph* const> graphs);
  static GraphBatch from(const chem::MolGraph& g);
  /// `copies` stacked replicas of this batch; replica r owns graphs
  /// [r*num_graphs, (r+1)*num_graphs).
  GraphBatch tiled(std::size_t copies) const;
};

struct DmpnnSpec {
  std::size_t node_in = chem::kNodeFeatureWidth;
  std::size_t edge_in = chem::kEdgeFeatureWidth;
  std::size_t hidden = 200;
  std::size_t out = 100;
  std::size_t depth = 2;
};

struct EdgeStates {
  ad::Value initial;  // h0, num_edges x hidden
  ad::Value current;  // h^t
  std::size_t steps = 0;
};

struct GraphRepr {
  ad::Value node_states;  // num_nodes x out
  ad::Value edge_states;  // num_edges x hidden
  ad::Value pooled;       // num_graphs x out
};

EdgeStates init_edges(const GraphBatch& batch, ad::Value node_in, ad::Value edge_in,
                      ad::Value w_in);
EdgeStates message_step(const EdgeStates& s, const GraphBatch& batch, ad::Value w_edge);
GraphRepr node_readout(const EdgeStates& s, const GraphBatch& batch, ad::Value node_in,
                       ad::Value w_node);

class Dmpnn {
 public:
  Dmpnn() = default;
  Dmpnn(const DmpnnSpec& spec, std::mt19937_64& rng, const std::string& prefix);

  GraphRepr forward(ad::Tape& tape, const GraphBatch& batch, ad::Value node_in,
                    ad::Value edge_in);
  /// Forward on the batch's own feature matrices.
  GraphRepr forward(ad::Tape& tape, const GraphBatch& batch);

  std::vector<ad::Parameter*> parameters();
  const DmpnnSpec& spec() const { return spec_; }

  ad::Parameter w_in;
  ad::Parameter w_edge;
  ad::Parameter w_node;

 private:
  DmpnnSpec spec_;
};

/// Xavier-uniform [fan_in x fan_out] matrix.
ad::Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace gate::nn
