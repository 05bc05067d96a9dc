#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "molbuild/chem.hpp"
#include "molbuild/smiles.hpp"
#include "test_util.hpp"

using namespace molbuild;

namespace {

AtomToken tok(Element e, int charge = 0, Chirality c = Chirality::None) {
  return *AtomToken::make(e, charge, c);
}

// Exhaustive injective mappings, no pruning.
bool brute_force_contains(const MolecularGraph& hay, const MolecularGraph& needle,
                          const std::vector<bool>& wildcard = {}) {
  const int n = needle.atom_count(), m = hay.atom_count();
  if (n > m) return false;
  std::vector<int> map(n, -1);
  std::vector<bool> used(m, false);
  std::function<bool(int)> rec = [&](int i) {
    if (i == n) {
      for (std::size_t k = 0; k < needle.bonds().size(); ++k) {
        const auto& b = needle.bonds()[k];
        int o = hay.bond_order(map[b.u], map[b.v]);
        if (o == 0) return false;
        bool wild = !wildcard.empty() && wildcard[k];
        if (!wild && o != b.order) return false;
      }
      return true;
    }
    for (int h = 0; h < m; ++h) {
      if (used[h]) continue;
      if (hay.atom(h).element() != needle.atom(i).element() ||
          hay.atom(h).charge() != needle.atom(i).charge())
        continue;
      used[h] = true;
      map[i] = h;
      if (rec(i + 1)) return true;
      used[h] = false;
    }
    return false;
  };
  return rec(0);
}

int brute_force_count(const MolecularGraph& hay, const MolecularGraph& needle) {
  const int n = needle.atom_count(), m = hay.atom_count();
  std::vector<int> map(n, -1);
  std::vector<bool> used(m, false);
  int count = 0;
  std::function<void(int)> rec = [&](int i) {
    if (i == n) {
      for (const auto& b : needle.bonds())
        if (hay.bond_order(map[b.u], map[b.v]) != b.order) return;
      ++count;
      return;
    }
    for (int h = 0; h < m; ++h) {
      if (used[h] || !(hay.atom(h) == needle.atom(i))) continue;
      used[h] = true;
      map[i] = h;
      rec(i + 1);
      used[h] = false;
    }
  };
  rec(0);
  return count;
}

}  // namespace

TEST(AtomToken, VocabularyHasTwentyThreeTokens) {
  int n = 0;
  for (auto e : {Element::C, Element::N, Element::O, Element::P, Element::S, Element::F,
                 Element::Cl, Element::Br, Element::I})
    for (int q : {-1, 0, 1})
      for (auto c : {Chirality::None, Chirality::CCW, Chirality::CW})
        if (AtomToken::make(e, q, c)) ++n;
  EXPECT_EQ(n, kVocabSize);
  EXPECT_FALSE(AtomToken::make(Element::N, 0, Chirality::CW));
  EXPECT_FALSE(AtomToken::make(Element::F, 1));
  EXPECT_FALSE(AtomToken::make(Element::C, 1, Chirality::CCW));
  for (int id = 0; id < kVocabSize; ++id) EXPECT_EQ(AtomToken::from_id(id).id(), id);
  EXPECT_THROW(AtomToken::from_id(kVocabSize), std::out_of_range);
}

TEST(AtomToken, ValenceTable) {
  const std::array<int, kVocabSize> expected{4, 3, 3, 4, 4, 3, 4, 2, 2, 3, 1, 5,
                                             4, 2, 6, 5, 1, 4, 4, 1, 1, 1, 1};
  EXPECT_EQ(valence_table(), expected);
  EXPECT_EQ(tok(Element::S, 0, Chirality::CW).max_valence(), 4);
  EXPECT_EQ(tok(Element::O, -1).max_valence(), 1);
  EXPECT_EQ(tok(Element::N, 1).symbol(), "[N+]");
  EXPECT_EQ(tok(Element::Cl).symbol(), "Cl");
  EXPECT_EQ(tok(Element::C, 0, Chirality::CW).symbol(), "[C@@]");
}

TEST(RemainingValence, Examples) {
  auto c = AtomToken::carbon();
  MolecularGraph g(c);
  EXPECT_EQ(remaining_valence(g, 0), 4);
  for (int i = 0; i < 4; ++i) g = g.add_atom_with_bond(c, 0, 1);
  EXPECT_EQ(remaining_valence(g, 0), 0);
  MolecularGraph o(tok(Element::O, -1));
  o = o.add_atom_with_bond(c, 0, 1);
  EXPECT_EQ(remaining_valence(o, 0), 0);
  EXPECT_THROW(remaining_valence(o, 2), std::out_of_range);
  EXPECT_THROW(remaining_valence(o, -1), std::out_of_range);
}

TEST(AddAtom, Examples) {
  auto c = AtomToken::carbon();
  auto ethane = MolecularGraph(c).add_atom_with_bond(c, 0, 1);
  EXPECT_EQ(ethane.atom_count(), 2);
  EXPECT_EQ(ethane.bond_count(), 1);
  auto formaldehyde = MolecularGraph(c).add_atom_with_bond(tok(Element::O), 0, 2);
  EXPECT_EQ(formaldehyde.used_valence(0), 2);
  EXPECT_THROW(MolecularGraph(c).add_atom_with_bond(c, 0, 5), ConstructionError);
  EXPECT_THROW(MolecularGraph(c).add_atom_with_bond(tok(Element::F), 0, 2), ConstructionError);
  EXPECT_THROW(MolecularGraph(c).add_atom_with_bond(c, 1, 1), std::out_of_range);
  EXPECT_THROW(ethane.add_atom_with_bond(c, 0, 1, 2), ConstructionError);
}

TEST(AddBond, Examples) {
  auto c = AtomToken::carbon();
  MolecularGraph chain(c);
  for (int i = 1; i < 4; ++i) chain = chain.add_atom_with_bond(c, i - 1, 1);
  EXPECT_EQ(cycle_rank(chain), 0);
  auto ring = chain.add_bond(0, 3, 1);
  EXPECT_EQ(cycle_rank(ring), 1);
  auto ethane = MolecularGraph(c).add_atom_with_bond(c, 0, 1);
  EXPECT_THROW(ethane.add_bond(0, 1, 1), ConstructionError);
  EXPECT_THROW(ethane.add_bond(0, 0, 1), ConstructionError);
  auto sat = parse_smiles("CC(C)(C)CC(C)(C)C");
  EXPECT_THROW(sat.add_bond(1, 5, 1), ConstructionError);
}

TEST(FromParts, RejectsInvalidInput) {
  auto c = AtomToken::carbon();
  EXPECT_THROW(MolecularGraph::from_parts({c, c}, {{0, 1, 1}, {1, 0, 1}}), ConstructionError);
  EXPECT_THROW(MolecularGraph::from_parts({c}, {{0, 0, 1}}), ConstructionError);
  EXPECT_THROW(MolecularGraph::from_parts({c, c}, {{0, 1, 7}}), ConstructionError);
  EXPECT_THROW(MolecularGraph::from_parts({c, tok(Element::F)}, {{0, 1, 2}}), ConstructionError);
  EXPECT_FALSE(MolecularGraph::from_parts({c, c}, {}).is_connected());
}

TEST(CycleRank, Examples) {
  EXPECT_EQ(cycle_rank(MolecularGraph(AtomToken::carbon())), 0);
  EXPECT_EQ(cycle_rank(parse_smiles("C1=CC=CC=C1")), 1);
  auto naph = parse_smiles("C1=CC=C2C=CC=CC2=C1");
  EXPECT_EQ(naph.atom_count(), 10);
  EXPECT_EQ(naph.bond_count(), 11);
  EXPECT_EQ(cycle_rank(naph), 2);
}

TEST(CycleRank, MatchesCoTreeEdgeCount) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = testutil::random_graph(rng, 3 + static_cast<int>(rng.index(15)));
    // spanning tree by BFS, count edges outside it
    std::vector<int> parent(g.atom_count(), -2);
    std::vector<int> queue{0};
    parent[0] = -1;
    int tree_edges = 0;
    for (std::size_t h = 0; h < queue.size(); ++h)
      for (auto [w, o] : g.neighbors(queue[h]))
        if (parent[w] == -2) {
          parent[w] = queue[h];
          queue.push_back(w);
          ++tree_edges;
        }
    EXPECT_EQ(cycle_rank(g), g.bond_count() - tree_edges);
  }
}

TEST(RingAtoms, Toluene) {
  auto g = parse_smiles("Cc1ccccc1");
  auto ring = ring_atoms(g);
  EXPECT_FALSE(ring[0]);
  for (int a = 1; a < 7; ++a) EXPECT_TRUE(ring[a]);
}

TEST(ContainsSubgraph, Examples) {
  auto benzene = parse_smiles("c1ccccc1");
  EXPECT_TRUE(contains_subgraph(parse_smiles("Cc1ccccc1"), benzene));
  EXPECT_FALSE(contains_subgraph(parse_smiles("CCCCCC"), benzene));
  EXPECT_FALSE(contains_subgraph(parse_smiles("CC"), benzene));
  auto ester = parse_smiles("CC(=O)OCC");
  auto pattern = parse_smiles("C(=O)OC");
  EXPECT_TRUE(brute_force_contains(ester, pattern));
  EXPECT_TRUE(contains_subgraph(ester, pattern));
  EXPECT_EQ(brute_force_count(ester, pattern), 1);
  EXPECT_EQ(find_substructure_matches(ester, SubstructurePattern(pattern)).size(), 1u);
}

TEST(ContainsSubgraph, WildcardOrder) {
  auto hay = parse_smiles("CC(=O)OC");
  auto needle = parse_smiles("C(O)O");  // all single
  EXPECT_FALSE(contains_subgraph(hay, needle));
  SubstructurePattern p(needle, {true, true});
  EXPECT_TRUE(contains_pattern(hay, p));
  EXPECT_TRUE(brute_force_contains(hay, needle, {true, true}));
}

TEST(ContainsSubgraph, SelfContainment) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = testutil::random_graph(rng, 1 + static_cast<int>(rng.index(20)));
    EXPECT_TRUE(contains_subgraph(g, g));
  }
}

TEST(ContainsSubgraph, AgreesWithBruteForce) {
  Rng rng(3);
  int positives = 0;
  for (int trial = 0; trial < 600; ++trial) {
    auto hay = testutil::random_graph(rng, 2 + static_cast<int>(rng.index(7)), 0.3, true);
    MolecularGraph needle;
    if (trial % 2 == 0) {
      // connected induced piece of the haystack, relabelled
      int k = 1 + static_cast<int>(rng.index(hay.atom_count()));
      std::vector<int> keep{static_cast<int>(rng.index(hay.atom_count()))};
      while (static_cast<int>(keep.size()) < k) {
        std::vector<int> frontier;
        for (int a : keep)
          for (auto [w, o] : hay.neighbors(a))
            if (std::find(keep.begin(), keep.end(), w) == keep.end()) frontier.push_back(w);
        if (frontier.empty()) break;
        keep.push_back(frontier[rng.index(frontier.size())]);
      }
      std::vector<AtomToken> atoms;
      for (int a : keep) atoms.push_back(hay.atom(a));
      std::vector<Bond> bonds;
      for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = i + 1; j < keep.size(); ++j)
          if (int o = hay.bond_order(keep[i], keep[j]); o && rng.uniform() < 0.8)
            bonds.push_back({static_cast<int>(i), static_cast<int>(j), o});
      needle = MolecularGraph::from_parts(atoms, bonds);
      if (!needle.is_connected()) continue;
    } else {
      needle = testutil::random_graph(rng, 1 + static_cast<int>(rng.index(5)), 0.3, true);
    }
    bool expected = brute_force_contains(hay, needle);
    positives += expected;
    EXPECT_EQ(contains_subgraph(hay, needle), expected)
        << write_smiles(hay) << " vs " << write_smiles(needle);
  }
  EXPECT_GT(positives, 100);
}

TEST(Graph, PermutedIsomorphicAndConnectivityMonotone) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = testutil::random_graph(rng, 2 + static_cast<int>(rng.index(12)));
    EXPECT_TRUE(g.is_connected());
    EXPECT_TRUE(g.valence_valid());
    auto p = g.permuted(testutil::random_permutation(rng, g.atom_count()));
    EXPECT_TRUE(contains_subgraph(p, g));
    EXPECT_EQ(p.bond_count(), g.bond_count());
  }
}
