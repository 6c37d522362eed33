#pragma once

// SMILES subset parser and graph featurization.
//
// Supported grammar: organic-subset atoms (B C N O P S F Cl Br I and the
// aromatic b c n o p s), bracket atoms with element, H count and charge,
// bonds - = # and implicit single/aromatic, branches, ring closures 0-9 and
// %nn. Stereo marks, isotopes, wildcards and '.' are rejected.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gate/autodiff.hpp"

namespace gate::chem {

enum class Element : std::uint8_t { C, N, O, F, P, S, Cl, Br, I, B, H, Other };
inline constexpr std::size_t kElementCount = 12;

enum class BondOrder : std::uint8_t { Single, Double, Triple, Aromatic };

inline constexpr std::size_t kNodeFeatureWidth = 28;
inline constexpr std::size_t kEdgeFeatureWidth = 6;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct Atom {
  Element element = Element::C;
  std::string symbol;  // as written, e.g. "Na" for Element::Other
  int charge = 0;
  bool aromatic = false;
  int explicit_h = 0;
  int implicit_h = 0;
  bool in_ring = false;
  std::size_t offset = 0;  // byte offset in the source string

  int total_h() const { return explicit_h + implicit_h; }
};

struct Bond {
  int begin = 0;
  int end = 0;
  BondOrder order = BondOrder::Single;
  bool in_ring = false;
};

/// Parsed molecule. Directed edge 2b runs begin->end of bond b, edge 2b+1
/// runs end->begin, so the reverse of edge e is e ^ 1.
struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<int> edge_src;
  std::vector<int> edge_dst;
  std::vector<int> edge_rev;
  ad::Matrix node_features;  // |V| x kNodeFeatureWidth
  ad::Matrix edge_features;  // 2|B| x kEdgeFeatureWidth

  std::size_t num_atoms() const { return atoms.size(); }
  std::size_t num_bonds() const { return bonds.size(); }
  std::size_t num_edges() const { return edge_src.size(); }
  int degree(int atom) const;
  bool operator==(const MolGraph& o) const;
};

MolGraph parse_smiles(std::string_view smiles);

/// Fills node_features / edge_features in place and returns the graph.
MolGraph featurize(MolGraph g);

/// parse + featurize.
MolGraph load_molecule(std::string_view smiles);

/// Ring-framework key: side chains are pruned to a fixpoint and the remaining
/// atoms/bonds are summarized as sorted signatures. Acyclic molecules map to "".
std::string scaffold_key(const MolGraph& g);

std::string_view element_symbol(Element e);

}  // namespace gate::chem
