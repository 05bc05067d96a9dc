#pragma once

// Molecular graph primitives: the 23-token atom vocabulary, the valence
// table, an immutable connected graph with valence bookkeeping, and
// substructure containment.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace molbuild {

inline constexpr int kDefaultMaxAtoms = 50;
inline constexpr int kMaxBondOrder = 6;
inline constexpr int kVocabSize = 23;

class ConstructionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Element : std::uint8_t { C, N, O, P, S, F, Cl, Br, I };
enum class Chirality : std::uint8_t { None, CCW, CW };  // "@", "@@"

std::string_view element_symbol(Element e);
double atomic_mass(Element e);

// One of the 23 vocabulary tokens. Only vocabulary combinations can be built.
class AtomToken {
 public:
  static std::optional<AtomToken> make(Element element, int charge = 0,
                                       Chirality chirality = Chirality::None);
  static AtomToken from_id(int id);
  static AtomToken carbon() { return from_id(0); }

  Element element() const { return element_; }
  int charge() const { return charge_; }
  Chirality chirality() const { return chirality_; }
  int id() const { return id_; }
  int max_valence() const;

  // SMILES-style spelling: "C", "Cl", "[N+]", "[C@@]".
  std::string symbol() const;

  friend bool operator==(const AtomToken& a, const AtomToken& b) { return a.id_ == b.id_; }

 private:
  AtomToken(Element e, int charge, Chirality c, int id)
      : element_(e), charge_(static_cast<std::int8_t>(charge)), chirality_(c), id_(id) {}

  Element element_;
  std::int8_t charge_;
  Chirality chirality_;
  int id_;
};

// Maximum total bond order per token, indexed by token id.
const std::array<int, kVocabSize>& valence_table();

struct Bond {
  int u = 0;  // u < v
  int v = 0;
  int order = 1;
  friend bool operator==(const Bond&, const Bond&) = default;
};

// Immutable molecular graph; construction operations return new graphs.
class MolecularGraph {
 public:
  MolecularGraph() = default;
  explicit MolecularGraph(AtomToken single);

  // Builds a graph from explicit parts. Checks indices, self loops, duplicate
  // bonds and valence; connectivity is reported by is_connected() instead.
  static MolecularGraph from_parts(std::vector<AtomToken> atoms, const std::vector<Bond>& bonds);

  int atom_count() const { return static_cast<int>(atoms_.size()); }
  int bond_count() const { return static_cast<int>(bonds_.size()); }
  bool empty() const { return atoms_.empty(); }

  const AtomToken& atom(int i) const { return atoms_.at(i); }
  const std::vector<AtomToken>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  // (neighbor, order) pairs in insertion order.
  const std::vector<std::pair<int, int>>& neighbors(int i) const { return adjacency_.at(i); }
  int degree(int i) const { return static_cast<int>(adjacency_.at(i).size()); }
  int used_valence(int i) const { return used_valence_.at(i); }
  // 0 when not bonded.
  int bond_order(int u, int v) const;
  bool bonded(int u, int v) const { return bond_order(u, v) != 0; }

  bool is_connected() const;
  bool valence_valid() const;

  MolecularGraph add_atom_with_bond(AtomToken token, int anchor, int order,
                                    int max_atoms = kDefaultMaxAtoms) const;
  MolecularGraph add_bond(int u, int v, int order) const;

  // Same atoms relabeled: new index k holds old atom order[k].
  MolecularGraph permuted(const std::vector<int>& order) const;

  friend bool operator==(const MolecularGraph& a, const MolecularGraph& b);

 private:
  void append_atom(AtomToken t);
  void append_bond(int u, int v, int order);

  std::vector<AtomToken> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<std::pair<int, int>>> adjacency_;
  std::vector<int> used_valence_;
};

int remaining_valence(const MolecularGraph& g, int atom_index);

// |E| - |V| + number of components; |E| - |V| + 1 for a connected graph.
int cycle_rank(const MolecularGraph& g);

// Per-atom flag: the atom lies on at least one cycle.
std::vector<bool> ring_atoms(const MolecularGraph& g);

// A query graph for substructure search. Bonds flagged as wildcard match any
// order; all others require an exact order match. Atoms match on element and
// formal charge.
struct SubstructurePattern {
  MolecularGraph graph;
  std::vector<bool> wildcard_bond;  // parallel to graph.bonds(); empty = exact

  explicit SubstructurePattern(MolecularGraph g, std::vector<bool> wildcard = {})
      : graph(std::move(g)), wildcard_bond(std::move(wildcard)) {}
};

// mapping[needle atom] = haystack atom. Stops after `limit` matches (0 = all).
std::vector<std::vector<int>> find_substructure_matches(const MolecularGraph& haystack,
                                                        const SubstructurePattern& pattern,
                                                        std::size_t limit = 0);

bool contains_pattern(const MolecularGraph& haystack, const SubstructurePattern& pattern);
bool contains_subgraph(const MolecularGraph& haystack, const MolecularGraph& needle);

}  // namespace molbuild
