#include "molbuild/chem.hpp"

#include <algorithm>
#include <numeric>

namespace molbuild {

namespace {

struct TokenSpec {
  Element element;
  int charge;
  Chirality chirality;
  int max_valence;
};

// Vocabulary order defines token ids.
constexpr std::array<TokenSpec, kVocabSize> kTokens{{
    {Element::C, 0, Chirality::None, 4},
    {Element::C, 1, Chirality::None, 3},
    {Element::C, -1, Chirality::None, 3},
    {Element::C, 0, Chirality::CCW, 4},
    {Element::C, 0, Chirality::CW, 4},
    {Element::N, 0, Chirality::None, 3},
    {Element::N, 1, Chirality::None, 4},
    {Element::N, -1, Chirality::None, 2},
    {Element::O, 0, Chirality::None, 2},
    {Element::O, 1, Chirality::None, 3},
    {Element::O, -1, Chirality::None, 1},
    {Element::P, 0, Chirality::None, 5},
    {Element::P, 1, Chirality::None, 4},
    {Element::P, -1, Chirality::None, 2},
    {Element::S, 0, Chirality::None, 6},
    {Element::S, 1, Chirality::None, 5},
    {Element::S, -1, Chirality::None, 1},
    {Element::S, 0, Chirality::CCW, 4},
    {Element::S, 0, Chirality::CW, 4},
    {Element::F, 0, Chirality::None, 1},
    {Element::Cl, 0, Chirality::None, 1},
    {Element::Br, 0, Chirality::None, 1},
    {Element::I, 0, Chirality::None, 1},
}};

constexpr std::array<int, kVocabSize> make_valences() {
  std::array<int, kVocabSize> out{};
  for (int i = 0; i < kVocabSize; ++i) out[i] = kTokens[i].max_valence;
  return out;
}

constexpr std::array<int, kVocabSize> kValences = make_valences();

}  // namespace

std::string_view element_symbol(Element e) {
  switch (e) {
    case Element::C: return "C";
    case Element::N: return "N";
    case Element::O: return "O";
    case Element::P: return "P";
    case Element::S: return "S";
    case Element::F: return "F";
    case Element::Cl: return "Cl";
    case Element::Br: return "Br";
    case Element::I: return "I";
  }
  return "?";
}

double atomic_mass(Element e) {
  switch (e) {
    case Element::C: return 12.011;
    case Element::N: return 14.007;
    case Element::O: return 15.999;
    case Element::P: return 30.974;
    case Element::S: return 32.06;
    case Element::F: return 18.998;
    case Element::Cl: return 35.45;
    case Element::Br: return 79.904;
    case Element::I: return 126.904;
  }
  return 0.0;
}

std::optional<AtomToken> AtomToken::make(Element element, int charge, Chirality chirality) {
  for (int i = 0; i < kVocabSize; ++i) {
    const auto& t = kTokens[i];
    if (t.element == element && t.charge == charge && t.chirality == chirality)
      return AtomToken(element, charge, chirality, i);
  }
  return std::nullopt;
}

AtomToken AtomToken::from_id(int id) {
  if (id < 0 || id >= kVocabSize) throw std::out_of_range("atom token id out of range");
  const auto& t = kTokens[id];
  return AtomToken(t.element, t.charge, t.chirality, id);
}

int AtomToken::max_valence() const { return kValences[id_]; }

std::string AtomToken::symbol() const {
  std::string base(element_symbol(element_));
  if (charge_ == 0 && chirality_ == Chirality::None) return base;
  std::string out = "[" + base;
  if (chirality_ == Chirality::CCW) out += "@";
  if (chirality_ == Chirality::CW) out += "@@";
  if (charge_ > 0) out += "+";
  if (charge_ < 0) out += "-";
  return out + "]";
}

const std::array<int, kVocabSize>& valence_table() { return kValences; }

// ---------------------------------------------------------------------------

MolecularGraph::MolecularGraph(AtomToken single) { append_atom(single); }

void MolecularGraph::append_atom(AtomToken t) {
  atoms_.push_back(t);
  adjacency_.emplace_back();
  used_valence_.push_back(0);
}

void MolecularGraph::append_bond(int u, int v, int order) {
  if (u > v) std::swap(u, v);
  bonds_.push_back({u, v, order});
  adjacency_[u].emplace_back(v, order);
  adjacency_[v].emplace_back(u, order);
  used_valence_[u] += order;
  used_valence_[v] += order;
}

MolecularGraph MolecularGraph::from_parts(std::vector<AtomToken> atoms,
                                          const std::vector<Bond>& bonds) {
  MolecularGraph g;
  for (const auto& a : atoms) g.append_atom(a);
  const int n = g.atom_count();
  for (const auto& b : bonds) {
    if (b.u < 0 || b.v < 0 || b.u >= n || b.v >= n)
      throw ConstructionError("bond endpoint out of range");
    if (b.u == b.v) throw ConstructionError("self-loop bond");
    if (b.order < 1 || b.order > kMaxBondOrder) throw ConstructionError("bond order out of range");
    if (g.bonded(b.u, b.v)) throw ConstructionError("duplicate bond");
    g.append_bond(b.u, b.v, b.order);
  }
  if (!g.valence_valid()) throw ConstructionError("valence exceeded");
  return g;
}

int MolecularGraph::bond_order(int u, int v) const {
  for (const auto& [w, order] : adjacency_.at(u))
    if (w == v) return order;
  return 0;
}

bool MolecularGraph::is_connected() const {
  if (atoms_.size() <= 1) return true;
  std::vector<bool> seen(atoms_.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    int a = stack.back();
    stack.pop_back();
    for (const auto& [w, order] : adjacency_[a]) {
      if (!seen[w]) {
        seen[w] = true;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == atoms_.size();
}

bool MolecularGraph::valence_valid() const {
  for (std::size_t i = 0; i < atoms_.size(); ++i)
    if (used_valence_[i] > atoms_[i].max_valence()) return false;
  return true;
}

MolecularGraph MolecularGraph::add_atom_with_bond(AtomToken token, int anchor, int order,
                                                  int max_atoms) const {
  if (anchor < 0 || anchor >= atom_count()) throw std::out_of_range("anchor out of range");
  if (order < 1 || order > kMaxBondOrder) throw ConstructionError("bond order out of range");
  if (atom_count() >= max_atoms) throw ConstructionError("atom capacity exceeded");
  if (order > token.max_valence()) throw ConstructionError("bond order exceeds new atom valence");
  if (remaining_valence(*this, anchor) < order) throw ConstructionError("anchor valence exceeded");
  MolecularGraph out = *this;
  out.append_atom(token);
  out.append_bond(anchor, out.atom_count() - 1, order);
  return out;
}

MolecularGraph MolecularGraph::add_bond(int u, int v, int order) const {
  if (u < 0 || v < 0 || u >= atom_count() || v >= atom_count())
    throw std::out_of_range("bond endpoint out of range");
  if (u == v) throw ConstructionError("self-loop bond");
  if (order < 1 || order > kMaxBondOrder) throw ConstructionError("bond order out of range");
  if (bonded(u, v)) throw ConstructionError("duplicate bond");
  if (remaining_valence(*this, u) < order || remaining_valence(*this, v) < order)
    throw ConstructionError("valence exceeded");
  MolecularGraph out = *this;
  out.append_bond(u, v, order);
  return out;
}

MolecularGraph MolecularGraph::permuted(const std::vector<int>& order) const {
  if (order.size() != atoms_.size()) throw std::invalid_argument("permutation size mismatch");
  std::vector<int> inverse(order.size(), -1);
  std::vector<AtomToken> atoms;
  atoms.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (order[k] < 0 || order[k] >= atom_count() || inverse[order[k]] != -1)
      throw std::invalid_argument("not a permutation");
    inverse[order[k]] = static_cast<int>(k);
    atoms.push_back(atoms_[order[k]]);
  }
  std::vector<Bond> bonds;
  bonds.reserve(bonds_.size());
  for (const auto& b : bonds_) bonds.push_back({inverse[b.u], inverse[b.v], b.order});
  return from_parts(std::move(atoms), bonds);
}

bool operator==(const MolecularGraph& a, const MolecularGraph& b) {
  if (a.atoms_ != b.atoms_ || a.bonds_.size() != b.bonds_.size()) return false;
  for (int i = 0; i < a.atom_count(); ++i) {
    if (a.degree(i) != b.degree(i)) return false;
    for (const auto& [w, order] : a.adjacency_[i])
      if (b.bond_order(i, w) != order) return false;
  }
  return true;
}

int remaining_valence(const MolecularGraph& g, int atom_index) {
  if (atom_index < 0 || atom_index >= g.atom_count())
    throw std::out_of_range("atom index out of range");
  return std::max(0, g.atom(atom_index).max_valence() - g.used_valence(atom_index));
}

int cycle_rank(const MolecularGraph& g) {
  const int n = g.atom_count();
  if (n == 0) return 0;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int components = n;
  for (const auto& b : g.bonds()) {
    int a = find(b.u), c = find(b.v);
    if (a != c) {
      parent[a] = c;
      --components;
    }
  }
  return g.bond_count() - n + components;
}

std::vector<bool> ring_atoms(const MolecularGraph& g) {
  // Tarjan bridge finding; an atom is in a ring iff it has a non-bridge bond.
  const int n = g.atom_count();
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<bool> in_ring(n, false);
  int timer = 0;
  struct Frame {
    int atom, parent, next;
  };
  for (int root = 0; root < n; ++root) {
    if (disc[root] != -1) continue;
    std::vector<Frame> stack{{root, -1, 0}};
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      const auto& nb = g.neighbors(f.atom);
      if (f.next < static_cast<int>(nb.size())) {
        int w = nb[f.next++].first;
        if (w == f.parent) continue;
        if (disc[w] == -1) {
          disc[w] = low[w] = timer++;
          stack.push_back({w, f.atom, 0});
        } else {
          low[f.atom] = std::min(low[f.atom], disc[w]);
        }
      } else {
        int a = f.atom, p = f.parent;
        stack.pop_back();
        if (p >= 0) {
          low[p] = std::min(low[p], low[a]);
          if (low[a] <= disc[p]) {  // (p, a) is not a bridge
            in_ring[a] = true;
            in_ring[p] = true;
          }
        }
      }
    }
  }
  return in_ring;
}

// ---------------------------------------------------------------------------
// Substructure search: backtracking over needle atoms in BFS order, so every
// atom after the first of each component has an already-mapped neighbour
// whose image restricts the candidates.

namespace {

class Matcher {
 public:
  Matcher(const MolecularGraph& hay, const SubstructurePattern& pat, std::size_t limit)
      : hay_(hay), pat_(pat), needle_(pat.graph), limit_(limit) {
    const int n = needle_.atom_count();
    wildcard_.assign(n, std::vector<bool>(n, false));
    for (std::size_t k = 0; k < needle_.bonds().size(); ++k) {
      if (k < pat.wildcard_bond.size() && pat.wildcard_bond[k]) {
        const auto& b = needle_.bonds()[k];
        wildcard_[b.u][b.v] = wildcard_[b.v][b.u] = true;
      }
    }
    // BFS order with the anchor (first mapped neighbour) of each atom.
    std::vector<bool> seen(n, false);
    for (int root = 0; root < n; ++root) {
      if (seen[root]) continue;
      seen[root] = true;
      std::size_t head = order_.size();
      order_.push_back(root);
      anchor_.push_back(-1);
      while (head < order_.size()) {
        int a = order_[head++];
        for (const auto& [w, o] : needle_.neighbors(a)) {
          if (!seen[w]) {
            seen[w] = true;
            order_.push_back(w);
            anchor_.push_back(a);
          }
        }
      }
    }
    map_.assign(n, -1);
    used_.assign(hay_.atom_count(), false);
  }

  std::vector<std::vector<int>> run() {
    if (needle_.atom_count() > hay_.atom_count()) return {};
    if (needle_.atom_count() == 0) return {{}};
    extend(0);
    return std::move(results_);
  }

 private:
  bool atom_ok(int na, int ha) const {
    const auto& x = needle_.atom(na);
    const auto& y = hay_.atom(ha);
    return x.element() == y.element() && x.charge() == y.charge() &&
           hay_.degree(ha) >= needle_.degree(na);
  }

  bool bonds_ok(int na, int ha) const {
    for (const auto& [w, order] : needle_.neighbors(na)) {
      int hw = map_[w];
      if (hw < 0) continue;
      int horder = hay_.bond_order(ha, hw);
      if (horder == 0) return false;
      if (!wildcard_[na][w] && horder != order) return false;
    }
    return true;
  }

  bool done() const { return limit_ != 0 && results_.size() >= limit_; }

  void try_candidate(std::size_t depth, int na, int ha) {
    if (used_[ha] || !atom_ok(na, ha) || !bonds_ok(na, ha)) return;
    map_[na] = ha;
    used_[ha] = true;
    extend(depth + 1);
    used_[ha] = false;
    map_[na] = -1;
  }

  void extend(std::size_t depth) {
    if (done()) return;
    if (depth == order_.size()) {
      results_.push_back(map_);
      return;
    }
    int na = order_[depth];
    int anchor = anchor_[depth];
    if (anchor < 0) {
      for (int ha = 0; ha < hay_.atom_count() && !done(); ++ha) try_candidate(depth, na, ha);
    } else {
      for (const auto& [ha, o] : hay_.neighbors(map_[anchor])) {
        if (done()) break;
        try_candidate(depth, na, ha);
      }
    }
  }

  const MolecularGraph& hay_;
  const SubstructurePattern& pat_;
  const MolecularGraph& needle_;
  std::size_t limit_;
  std::vector<std::vector<bool>> wildcard_;
  std::vector<int> order_, anchor_, map_;
  std::vector<bool> used_;
  std::vector<std::vector<int>> results_;
};

}  // namespace

std::vector<std::vector<int>> find_substructure_matches(const MolecularGraph& haystack,
                                                        const SubstructurePattern& pattern,
                                                        std::size_t limit) {
  return Matcher(haystack, pattern, limit).run();
}

bool contains_pattern(const MolecularGraph& haystack, const SubstructurePattern& pattern) {
  return !find_substructure_matches(haystack, pattern, 1).empty();
}

bool contains_subgraph(const MolecularGraph& haystack, const MolecularGraph& needle) {
  return contains_pattern(haystack, SubstructurePattern(needle));
}

}  // namespace molbuild
