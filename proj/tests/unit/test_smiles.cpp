#include <gtest/gtest.h>

#include <random>

#include "gate/data.hpp"
#include "gate/smiles.hpp"

using namespace gate::chem;

namespace {

constexpr int kDegree = 12;
constexpr int kHydrogens = 18;
constexpr int kAromatic = 26;
constexpr int kRing = 27;

int hot_index(const gate::ad::Matrix& f, int row, int begin, int width) {
  int hot = -1;
  for (int j = 0; j < width; ++j)
    if (f(row, begin + j) == 1.0) hot = j;
  return hot;
}

std::size_t error_offset(const std::string& smiles) {
  try {
    parse_smiles(smiles);
  } catch (const ParseError& e) {
    return e.offset();
  }
  ADD_FAILURE() << smiles << " parsed";
  return 0;
}

}  // namespace

TEST(Smiles, MethaneImplicitHydrogens) {
  MolGraph g = parse_smiles("C");
  ASSERT_EQ(g.num_atoms(), 1u);
  EXPECT_EQ(g.atoms[0].implicit_h, 4);
  EXPECT_EQ(g.num_edges(), 0u);
}

TEST(Smiles, EthanolCounts) {
  MolGraph g = parse_smiles("CCO");
  EXPECT_EQ(g.num_atoms(), 3u);
  EXPECT_EQ(g.num_bonds(), 2u);
  EXPECT_EQ(g.num_edges(), 4u);
  EXPECT_EQ(g.atoms[2].element, Element::O);
  EXPECT_EQ(g.atoms[2].implicit_h, 1);
}

TEST(Smiles, DirectedEdgesPairUp) {
  MolGraph g = parse_smiles("CC(=O)N");
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    EXPECT_EQ(g.edge_rev[e], static_cast<int>(e ^ 1u));
    EXPECT_EQ(g.edge_src[e], g.edge_dst[g.edge_rev[e]]);
    EXPECT_EQ(g.edge_dst[e], g.edge_src[g.edge_rev[e]]);
  }
}

TEST(Smiles, BenzeneIsAromaticRing) {
  MolGraph g = parse_smiles("c1ccccc1");
  ASSERT_EQ(g.num_atoms(), 6u);
  EXPECT_EQ(g.num_bonds(), 6u);
  for (const Atom& a : g.atoms) {
    EXPECT_TRUE(a.aromatic);
    EXPECT_TRUE(a.in_ring);
    EXPECT_EQ(a.total_h(), 1);
  }
  for (const Bond& b : g.bonds) EXPECT_EQ(b.order, BondOrder::Aromatic);
}

TEST(Smiles, BondOrdersAndHydrogens) {
  MolGraph g = parse_smiles("C=CC#N");
  EXPECT_EQ(g.bonds[0].order, BondOrder::Double);
  EXPECT_EQ(g.bonds[2].order, BondOrder::Triple);
  EXPECT_EQ(g.atoms[0].implicit_h, 2);
  EXPECT_EQ(g.atoms[1].implicit_h, 1);
  EXPECT_EQ(g.atoms[2].implicit_h, 0);
  EXPECT_EQ(g.atoms[3].implicit_h, 0);
}

TEST(Smiles, BracketAtoms) {
  MolGraph g = parse_smiles("[NH4+]");
  EXPECT_EQ(g.atoms[0].explicit_h, 4);
  EXPECT_EQ(g.atoms[0].implicit_h, 0);
  EXPECT_EQ(g.atoms[0].charge, 1);
  MolGraph o = parse_smiles("C[O-]");
  EXPECT_EQ(o.atoms[1].charge, -1);
  EXPECT_EQ(o.atoms[1].total_h(), 0);
}

TEST(Smiles, TwoLetterHalogensAndPercentRings) {
  MolGraph g = parse_smiles("ClCBr");
  EXPECT_EQ(g.atoms[0].element, Element::Cl);
  EXPECT_EQ(g.atoms[2].element, Element::Br);
  MolGraph r = parse_smiles("C%12CC%12");
  EXPECT_EQ(r.num_bonds(), 3u);
  for (const Atom& a : r.atoms) EXPECT_TRUE(a.in_ring);
}

TEST(Smiles, RingMembershipExcludesSideChains) {
  MolGraph g = parse_smiles("C1CCCCC1CC");
  for (int i = 0; i < 6; ++i) EXPECT_TRUE(g.atoms[i].in_ring);
  EXPECT_FALSE(g.atoms[6].in_ring);
  EXPECT_FALSE(g.atoms[7].in_ring);
  EXPECT_FALSE(g.bonds[6].in_ring);
}

TEST(Featurize, MethaneFeatures) {
  MolGraph g = load_molecule("C");
  ASSERT_EQ(g.node_features.cols(), static_cast<Eigen::Index>(kNodeFeatureWidth));
  EXPECT_EQ(hot_index(g.node_features, 0, 0, 12), static_cast<int>(Element::C));
  EXPECT_EQ(hot_index(g.node_features, 0, kDegree, 6), 0);
  EXPECT_EQ(hot_index(g.node_features, 0, kHydrogens, 5), 4);
  EXPECT_EQ(g.edge_features.rows(), 0);
}

TEST(Featurize, BenzeneFeatures) {
  MolGraph g = load_molecule("c1ccccc1");
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(g.node_features(i, kAromatic), 1.0);
    EXPECT_EQ(g.node_features(i, kRing), 1.0);
    EXPECT_EQ(hot_index(g.node_features, i, kDegree, 6), 2);
  }
  for (Eigen::Index e = 0; e < g.edge_features.rows(); ++e) {
    EXPECT_EQ(g.edge_features(e, 3), 1.0);
    EXPECT_EQ(g.edge_features(e, 4), 1.0);
    EXPECT_EQ(g.edge_features(e, 5), 1.0);
  }
}

TEST(Featurize, OneHotBlocksSumToOne) {
  std::mt19937_64 rng(2);
  for (const auto& s : gate::data::random_molecules(50, rng)) {
    MolGraph g = load_molecule(s);
    for (Eigen::Index i = 0; i < g.node_features.rows(); ++i) {
      EXPECT_EQ(g.node_features.row(i).segment(0, 12).sum(), 1.0) << s;
      EXPECT_EQ(g.node_features.row(i).segment(12, 6).sum(), 1.0) << s;
      EXPECT_EQ(g.node_features.row(i).segment(18, 5).sum(), 1.0) << s;
      EXPECT_EQ(g.node_features.row(i).segment(23, 3).sum(), 1.0) << s;
    }
    for (Eigen::Index e = 0; e < g.edge_features.rows(); ++e)
      EXPECT_EQ(g.edge_features.row(e).segment(0, 4).sum(), 1.0) << s;
  }
}

TEST(Scaffold, AcyclicIsEmpty) { EXPECT_EQ(scaffold_key(parse_smiles("CCCC")), ""); }

TEST(Scaffold, SideChainsPruned) {
  EXPECT_EQ(scaffold_key(parse_smiles("c1ccccc1")), scaffold_key(parse_smiles("c1ccccc1C")));
  EXPECT_EQ(scaffold_key(parse_smiles("c1ccccc1")), scaffold_key(parse_smiles("CCc1ccccc1CO")));
}

TEST(Scaffold, AromaticityDistinguishes) {
  EXPECT_NE(scaffold_key(parse_smiles("c1ccccc1")), scaffold_key(parse_smiles("C1CCCCC1")));
}

TEST(Scaffold, LinkersKept) {
  EXPECT_NE(scaffold_key(parse_smiles("c1ccccc1")),
            scaffold_key(parse_smiles("c1ccccc1CCc1ccccc1")));
}

TEST(SmilesErrors, UnbalancedParenthesis) {
  EXPECT_EQ(error_offset("CC(C"), 2u);
  EXPECT_EQ(error_offset("CC)C"), 2u);
}

TEST(SmilesErrors, DanglingRingClosure) { EXPECT_EQ(error_offset("C1CC"), 1u); }

TEST(SmilesErrors, UnknownElement) { EXPECT_EQ(error_offset("CXC"), 1u); }

TEST(SmilesErrors, ValenceOverflow) { EXPECT_EQ(error_offset("CC(C)(C)(C)C"), 1u); }

TEST(SmilesErrors, EmptyAndUnsupported) {
  EXPECT_THROW(parse_smiles(""), ParseError);
  EXPECT_THROW(parse_smiles("C.C"), ParseError);
  EXPECT_THROW(parse_smiles("C[C@H](O)N"), ParseError);
}
