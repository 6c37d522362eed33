#include "gate/smiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <set>

namespace gate::chem {

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

namespace {

// Symbols accepted inside brackets; anything else is an unknown element.
const std::set<std::string, std::less<>> kPeriodicTable = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr"};

Element classify(std::string_view sym) {
  static const std::map<std::string, Element, std::less<>> known = {
      {"C", Element::C},   {"N", Element::N},   {"O", Element::O},   {"F", Element::F},
      {"P", Element::P},   {"S", Element::S},   {"Cl", Element::Cl}, {"Br", Element::Br},
      {"I", Element::I},   {"B", Element::B},   {"H", Element::H}};
  auto it = known.find(sym);
  return it == known.end() ? Element::Other : it->second;
}

// Standard valences for organic-subset implicit hydrogen assignment.
std::vector<int> default_valences(Element e) {
  switch (e) {
    case Element::B: return {3};
    case Element::C: return {4};
    case Element::N: return {3, 5};
    case Element::O: return {2};
    case Element::P: return {3, 5};
    case Element::S: return {2, 4, 6};
    case Element::F:
    case Element::Cl:
    case Element::Br:
    case Element::I:
    case Element::H: return {1};
    case Element::Other: return {};
  }
  return {};
}

int bond_valence(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1;
    case BondOrder::Double: return 2;
    case BondOrder::Triple: return 3;
    case BondOrder::Aromatic: return 1;
  }
  return 1;
}

struct RingOpen {
  int atom;
  std::optional<BondOrder> order;
  std::size_t offset;
};

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  MolGraph run() {
    if (s_.empty()) throw ParseError("empty SMILES", 0);
    std::vector<int> branch_stack;
    std::vector<std::size_t> branch_offsets;
    int prev = -1;
    std::optional<BondOrder> pending;
    std::size_t pending_offset = 0;

    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      const std::size_t at = pos_;
      if (c == '(') {
        if (prev < 0) throw ParseError("branch without a preceding atom", at);
        branch_stack.push_back(prev);
        branch_offsets.push_back(at);
        ++pos_;
      } else if (c == ')') {
        if (branch_stack.empty()) throw ParseError("unbalanced ')'", at);
        if (pending) throw ParseError("bond symbol before ')'", pending_offset);
        prev = branch_stack.back();
        branch_stack.pop_back();
        branch_offsets.pop_back();
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == ':') {
        if (pending) throw ParseError("consecutive bond symbols", at);
        pending = c == '-' ? BondOrder::Single
                : c == '=' ? BondOrder::Double
                : c == '#' ? BondOrder::Triple
                           : BondOrder::Aromatic;
        pending_offset = at;
        ++pos_;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (prev < 0) throw ParseError("ring closure without a preceding atom", at);
        int label = 0;
        if (c == '%') {
          if (pos_ + 2 >= s_.size() ||
              !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
              !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2])))
            throw ParseError("malformed %nn ring label", at);
          label = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
          pos_ += 3;
        } else {
          label = c - '0';
          ++pos_;
        }
        ring_closure(prev, label, pending, at);
        pending.reset();
      } else if (c == '.') {
        throw ParseError("multi-fragment SMILES ('.') not supported", at);
      } else if (c == '/' || c == '\\') {
        throw ParseError("stereo bond marks not supported", at);
      } else {
        const int atom = c == '[' ? bracket_atom() : organic_atom();
        if (prev >= 0) add_bond(prev, atom, pending, pending ? pending_offset : at);
        else if (pending) throw ParseError("bond symbol without a preceding atom", pending_offset);
        pending.reset();
        prev = atom;
      }
    }
    if (!branch_stack.empty()) throw ParseError("unbalanced '('", branch_offsets.back());
    if (pending) throw ParseError("dangling bond symbol", pending_offset);
    if (!rings_.empty()) throw ParseError("dangling ring closure", rings_.begin()->second.offset);
    if (g_.atoms.empty()) throw ParseError("no atoms", 0);

    assign_hydrogens();
    perceive_rings();
    build_edges();
    return std::move(g_);
  }

 private:
  int organic_atom() {
    const std::size_t at = pos_;
    const char c = s_[pos_];
    Atom a;
    a.offset = at;
    if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
      a.symbol = "Cl";
      pos_ += 2;
    } else if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
      a.symbol = "Br";
      pos_ += 2;
    } else if (std::string_view("BCNOPSFI").find(c) != std::string_view::npos) {
      a.symbol = std::string(1, c);
      ++pos_;
    } else if (std::string_view("bcnops").find(c) != std::string_view::npos) {
      a.symbol = std::string(1, static_cast<char>(std::toupper(c)));
      a.aromatic = true;
      ++pos_;
    } else {
      throw ParseError(std::string("unknown element '") + c + "'", at);
    }
    a.element = classify(a.symbol);
    organic_.push_back(true);
    g_.atoms.push_back(std::move(a));
    return static_cast<int>(g_.atoms.size()) - 1;
  }

  int bracket_atom() {
    const std::size_t open = pos_;
    const std::size_t close = s_.find(']', pos_);
    if (close == std::string_view::npos) throw ParseError("unterminated bracket atom", open);
    std::size_t p = pos_ + 1;
    auto peek = [&]() -> char { return p < close ? s_[p] : '\0'; };
    if (std::isdigit(static_cast<unsigned char>(peek())))
      throw ParseError("isotopes not supported", p);
    Atom a;
    a.offset = open;
    if (std::islower(static_cast<unsigned char>(peek()))) {
      const char lc = peek();
      if (std::string_view("bcnops").find(lc) == std::string_view::npos)
        throw ParseError(std::string("unknown aromatic element '") + lc + "'", p);
      a.symbol = std::string(1, static_cast<char>(std::toupper(lc)));
      a.aromatic = true;
      ++p;
    } else if (std::isupper(static_cast<unsigned char>(peek()))) {
      std::string sym(1, peek());
      ++p;
      if (std::islower(static_cast<unsigned char>(peek()))) {
        std::string two = sym + peek();
        if (kPeriodicTable.count(two)) {
          sym = two;
          ++p;
        }
      }
      if (!kPeriodicTable.count(sym)) throw ParseError("unknown element '" + sym + "'", p - 1);
      a.symbol = sym;
    } else {
      throw ParseError("bracket atom without element", p);
    }
    a.element = classify(a.symbol);
    if (peek() == '@') throw ParseError("chirality not supported", p);
    if (peek() == 'H') {
      ++p;
      int n = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        n = peek() - '0';
        ++p;
      }
      a.explicit_h = n;
    }
    if (peek() == '+' || peek() == '-') {
      const char sign = peek();
      int mag = 0;
      while (peek() == sign) {
        ++mag;
        ++p;
      }
      if (mag == 1 && std::isdigit(static_cast<unsigned char>(peek()))) {
        mag = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) {
          mag = mag * 10 + (peek() - '0');
          ++p;
        }
      }
      a.charge = sign == '+' ? mag : -mag;
    }
    if (p != close) throw ParseError("unexpected character in bracket atom", p);
    pos_ = close + 1;
    organic_.push_back(false);
    g_.atoms.push_back(std::move(a));
    return static_cast<int>(g_.atoms.size()) - 1;
  }

  void add_bond(int a, int b, std::optional<BondOrder> order, std::size_t offset) {
    if (a == b) throw ParseError("bond from an atom to itself", offset);
    for (const Bond& bd : g_.bonds) {
      if ((bd.begin == a && bd.end == b) || (bd.begin == b && bd.end == a))
        throw ParseError("duplicate bond between the same atoms", offset);
    }
    Bond bd;
    bd.begin = a;
    bd.end = b;
    if (order) {
      bd.order = *order;
    } else {
      bd.order = g_.atoms[a].aromatic && g_.atoms[b].aromatic ? BondOrder::Aromatic
                                                             : BondOrder::Single;
    }
    g_.bonds.push_back(bd);
  }

  void ring_closure(int atom, int label, std::optional<BondOrder> order, std::size_t offset) {
    auto it = rings_.find(label);
    if (it == rings_.end()) {
      rings_.emplace(label, RingOpen{atom, order, offset});
      return;
    }
    const RingOpen open = it->second;
    rings_.erase(it);
    if (order && open.order && *order != *open.order)
      throw ParseError("conflicting ring-closure bond orders", offset);
    add_bond(open.atom, atom, order ? order : open.order, offset);
  }

  void assign_hydrogens() {
    std::vector<int> used(g_.atoms.size(), 0);
    std::vector<int> aromatic_bonds(g_.atoms.size(), 0);
    for (const Bond& b : g_.bonds) {
      used[b.begin] += bond_valence(b.order);
      used[b.end] += bond_valence(b.order);
      if (b.order == BondOrder::Aromatic) {
        ++aromatic_bonds[b.begin];
        ++aromatic_bonds[b.end];
      }
    }
    for (std::size_t i = 0; i < g_.atoms.size(); ++i) {
      Atom& a = g_.atoms[i];
      int load = used[i];
      // Aromatic c/n/b/p contribute one pi electron to the ring valence;
      // o and s use both ring bonds as their full valence.
      if (a.aromatic && aromatic_bonds[i] > 0 && a.element != Element::O &&
          a.element != Element::S)
        load += 1;
      if (organic_[i]) {
        const auto valences = default_valences(a.element);
        std::optional<int> target;
        for (int v : valences) {
          if (v >= load) {
            target = v;
            break;
          }
        }
        if (!target) throw ParseError("valence overflow on " + a.symbol, a.offset);
        a.implicit_h = *target - load;
      } else {
        const auto valences = default_valences(a.element);
        if (!valences.empty()) {
          const int bound = valences.back() + std::abs(a.charge);
          if (load + a.explicit_h > bound)
            throw ParseError("valence overflow on " + a.symbol, a.offset);
        }
      }
    }
  }

  // A bond lies on a ring iff it is not a bridge.
  void perceive_rings() {
    const std::size_t n = g_.atoms.size();
    std::vector<std::vector<std::pair<int, int>>> adj(n);
    for (std::size_t b = 0; b < g_.bonds.size(); ++b) {
      adj[g_.bonds[b].begin].push_back({g_.bonds[b].end, static_cast<int>(b)});
      adj[g_.bonds[b].end].push_back({g_.bonds[b].begin, static_cast<int>(b)});
    }
    std::vector<int> disc(n, -1), low(n, 0);
    int timer = 0;
    std::function<void(int, int)> dfs = [&](int u, int parent_bond) {
      disc[u] = low[u] = timer++;
      for (auto [v, b] : adj[u]) {
        if (b == parent_bond) continue;
        if (disc[v] < 0) {
          dfs(v, b);
          low[u] = std::min(low[u], low[v]);
          if (low[v] <= disc[u]) g_.bonds[b].in_ring = true;
        } else {
          low[u] = std::min(low[u], disc[v]);
          g_.bonds[b].in_ring = true;
        }
      }
    };
    for (std::size_t i = 0; i < n; ++i)
      if (disc[i] < 0) dfs(static_cast<int>(i), -1);
    for (const Bond& b : g_.bonds) {
      if (b.in_ring) {
        g_.atoms[b.begin].in_ring = true;
        g_.atoms[b.end].in_ring = true;
      }
    }
  }

  void build_edges() {
    for (std::size_t b = 0; b < g_.bonds.size(); ++b) {
      const int e = static_cast<int>(2 * b);
      g_.edge_src.push_back(g_.bonds[b].begin);
      g_.edge_dst.push_back(g_.bonds[b].end);
      g_.edge_rev.push_back(e + 1);
      g_.edge_src.push_back(g_.bonds[b].end);
      g_.edge_dst.push_back(g_.bonds[b].begin);
      g_.edge_rev.push_back(e);
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  MolGraph g_;
  std::vector<bool> organic_;
  std::map<int, RingOpen> rings_;
};

template <std::size_t N>
void one_hot(ad::Matrix& m, Eigen::Index row, Eigen::Index offset, std::size_t index) {
  m(row, offset + static_cast<Eigen::Index>(std::min(index, N - 1))) = 1.0;
}

}  // namespace

int MolGraph::degree(int atom) const {
  int d = 0;
  for (const Bond& b : bonds) d += (b.begin == atom) + (b.end == atom);
  return d;
}

bool MolGraph::operator==(const MolGraph& o) const {
  if (atoms.size() != o.atoms.size() || bonds.size() != o.bonds.size()) return false;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const Atom &a = atoms[i], &b = o.atoms[i];
    if (a.element != b.element || a.symbol != b.symbol || a.charge != b.charge ||
        a.aromatic != b.aromatic || a.explicit_h != b.explicit_h ||
        a.implicit_h != b.implicit_h || a.in_ring != b.in_ring)
      return false;
  }
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    const Bond &a = bonds[i], &b = o.bonds[i];
    if (a.begin != b.begin || a.end != b.end || a.order != b.order || a.in_ring != b.in_ring)
      return false;
  }
  return edge_src == o.edge_src && edge_dst == o.edge_dst && edge_rev == o.edge_rev &&
         node_features == o.node_features && edge_features == o.edge_features;
}

std::string_view element_symbol(Element e) {
  static constexpr std::array<std::string_view, kElementCount> names = {
      "C", "N", "O", "F", "P", "S", "Cl", "Br", "I", "B", "H", "*"};
  return names[static_cast<std::size_t>(e)];
}

MolGraph parse_smiles(std::string_view smiles) {
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    if (static_cast<unsigned char>(smiles[i]) > 127) throw ParseError("non-ASCII byte", i);
  }
  return Parser(smiles).run();
}

MolGraph featurize(MolGraph g) {
  const auto nv = static_cast<Eigen::Index>(g.num_atoms());
  const auto ne = static_cast<Eigen::Index>(g.num_edges());
  g.node_features = ad::Matrix::Zero(nv, kNodeFeatureWidth);
  g.edge_features = ad::Matrix::Zero(ne, kEdgeFeatureWidth);

  std::vector<int> degree(g.num_atoms(), 0);
  for (const Bond& b : g.bonds) {
    ++degree[b.begin];
    ++degree[b.end];
  }
  // element(12) | degree 0-5 (6) | total H 0-4 (5) | charge -,0,+ (3) | aromatic | ring
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Atom& a = g.atoms[i];
    one_hot<12>(g.node_features, i, 0, static_cast<std::size_t>(a.element));
    one_hot<6>(g.node_features, i, 12, static_cast<std::size_t>(degree[i]));
    one_hot<5>(g.node_features, i, 18, static_cast<std::size_t>(a.total_h()));
    one_hot<3>(g.node_features, i, 23, a.charge < 0 ? 0 : a.charge == 0 ? 1 : 2);
    g.node_features(i, 26) = a.aromatic ? 1.0 : 0.0;
    g.node_features(i, 27) = a.in_ring ? 1.0 : 0.0;
  }
  // order(4) | ring | aromatic
  for (Eigen::Index e = 0; e < ne; ++e) {
    const Bond& b = g.bonds[static_cast<std::size_t>(e / 2)];
    one_hot<4>(g.edge_features, e, 0, static_cast<std::size_t>(b.order));
    g.edge_features(e, 4) = b.in_ring ? 1.0 : 0.0;
    g.edge_features(e, 5) = b.order == BondOrder::Aromatic ? 1.0 : 0.0;
  }
  return g;
}

MolGraph load_molecule(std::string_view smiles) { return featurize(parse_smiles(smiles)); }

std::string scaffold_key(const MolGraph& g) {
  const std::size_t n = g.num_atoms();
  bool any_ring = false;
  for (const Atom& a : g.atoms) any_ring = any_ring || a.in_ring;
  if (!any_ring) return "";

  std::vector<bool> alive(n, true);
  std::vector<int> degree(n, 0);
  for (const Bond& b : g.bonds) {
    ++degree[b.begin];
    ++degree[b.end];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i] || g.atoms[i].in_ring || degree[i] > 1) continue;
      alive[i] = false;
      changed = true;
      for (const Bond& b : g.bonds) {
        if (b.begin == static_cast<int>(i) && alive[b.end]) --degree[b.end];
        if (b.end == static_cast<int>(i) && alive[b.begin]) --degree[b.begin];
      }
    }
  }

  auto label = [&](int i) {
    const Atom& a = g.atoms[i];
    std::string s(element_symbol(a.element));
    if (a.element == Element::Other) s = a.symbol;
    if (a.aromatic) s = "ar" + s;
    return s;
  };
  std::vector<std::string> atoms, edges;
  for (std::size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    atoms.push_back(label(static_cast<int>(i)) + "/" + std::to_string(degree[i]) + "/" +
                    (g.atoms[i].in_ring ? "R" : "C"));
  }
  for (const Bond& b : g.bonds) {
    if (!alive[b.begin] || !alive[b.end]) continue;
    std::string u = label(b.begin), v = label(b.end);
    if (v < u) std::swap(u, v);
    edges.push_back(u + "~" + v + "~" + std::to_string(static_cast<int>(b.order)) +
                    (b.in_ring ? "R" : "C"));
  }
  std::sort(atoms.begin(), atoms.end());
  std::sort(edges.begin(), edges.end());
  std::string key;
  for (const auto& a : atoms) key += a + ",";
  key += "|";
  for (const auto& e : edges) key += e + ",";
  return key;
}

}  // namespace gate::chem
