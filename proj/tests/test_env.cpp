#include <gtest/gtest.h>

#include "molbuild/env.hpp"
#include "molbuild/smiles.hpp"
#include "test_util.hpp"

using namespace molbuild;

namespace {

std::vector<int> legal_indices(const ActionMask& m) {
  std::vector<int> out;
  for (std::size_t i = 0; i < m.legal.size(); ++i)
    if (m.legal[i]) out.push_back(static_cast<int>(i));
  return out;
}

struct Rollout {
  EnvState final;
  int composite_steps = 0;
};

Rollout random_rollout(Rng& rng, const MolecularGraph& start, const EnvConfig& cfg, double stop_bias = 0.0) {
  auto s = seed_state(start);
  Rollout r;
  while (!s.done()) {
    auto m = legal_mask(s, cfg);
    auto legal = legal_indices(m);
    EXPECT_FALSE(legal.empty());
    int a;
    if (m.level == 0 && m.legal[0] && rng.uniform() < stop_bias) a = 0;
    else a = legal[rng.index(legal.size())];
    if (m.level == 0) ++r.composite_steps;
    s = apply(s, a, cfg);
    EXPECT_TRUE(s.graph.valence_valid());
  }
  r.final = s;
  return r;
}

}  // namespace

TEST(Mask, FreshCarbon) {
  auto s = seed_state(AtomToken::carbon());
  auto m = legal_mask(s);
  ASSERT_EQ(m.legal.size(), 25u);
  EXPECT_TRUE(m.legal[0]);
  for (int t = 1; t <= 23; ++t) EXPECT_TRUE(m.legal[t]);
  EXPECT_FALSE(m.legal[24]);
}

TEST(Mask, SaturatedAnchorMasked) {
  auto s = seed_state(parse_smiles("CC(C)(C)C"));
  s = apply(s, 1);  // AddAtom(C)
  auto m = legal_mask(s);
  EXPECT_FALSE(m.legal[1]);
  EXPECT_TRUE(m.legal[0]);
}

TEST(Mask, EtheneOrders) {
  auto s = seed_state(parse_smiles("C=C"));
  s = apply(apply(s, 1), 0);
  auto m = legal_mask(s);
  EXPECT_EQ(legal_indices(m), (std::vector<int>{0, 1}));
}

TEST(Mask, CapacityLeavesSelectAndStop) {
  EnvConfig cfg;
  cfg.max_atoms = 4;
  auto s = seed_state(parse_smiles("CCCC"));
  auto m = legal_mask(s, cfg);
  for (int t = 1; t <= 23; ++t) EXPECT_FALSE(m.legal[t]);
  EXPECT_TRUE(m.legal[0]);
  EXPECT_TRUE(m.legal[24 + 0]);
  EXPECT_TRUE(m.legal[24 + 3]);
  EXPECT_THROW(apply(s, 1, cfg), ContractError);
}

TEST(Mask, MinAddedAtomsHoldsStop) {
  EnvConfig cfg;
  cfg.min_added_atoms = 1;
  auto s = seed_state(AtomToken::carbon());
  EXPECT_FALSE(legal_mask(s, cfg).legal[0]);
  s = apply(apply(apply(s, 1), 0, cfg), 0, cfg);
  EXPECT_TRUE(legal_mask(s, cfg).legal[0]);
  // nothing can grow from a lone fluorine at capacity 1, so Stop stays open
  cfg.max_atoms = 1;
  EXPECT_TRUE(legal_mask(seed_state(AtomToken::from_id(19)), cfg).legal[0]);
}

TEST(Apply, AddOxygen) {
  auto s = seed_state(AtomToken::carbon());
  s = apply(s, 1 + 8);
  EXPECT_EQ(s.phase, Phase::Level1);
  s = apply(s, 0);
  s = apply(s, 0);
  EXPECT_EQ(s.phase, Phase::Level0);
  EXPECT_EQ(s.graph.atom_count(), 2);
  EXPECT_EQ(s.graph.atom(1).element(), Element::O);
  EXPECT_EQ(s.step_count, 1);
  auto done = apply(s, 0);
  EXPECT_TRUE(done.done());
  EXPECT_EQ(done.graph, s.graph);
  EXPECT_THROW(legal_mask(done), ContractError);
  EXPECT_THROW(apply(done, 0), ContractError);
}

TEST(Apply, SelectExistingClosesRing) {
  auto s = seed_state(parse_smiles("CCCCCC"));
  s = apply(s, 24 + 0);
  auto m1 = legal_mask(s);
  EXPECT_EQ(legal_indices(m1), (std::vector<int>{2, 3, 4, 5}));
  s = apply(apply(s, 5), 0);
  EXPECT_EQ(cycle_rank(s.graph), 1);
}

TEST(Seed, Errors) {
  EXPECT_THROW(seed_state(MolecularGraph{}), std::invalid_argument);
  auto c = AtomToken::carbon();
  EXPECT_THROW(seed_state(MolecularGraph::from_parts({c, c}, {})), std::invalid_argument);
  auto s = seed_state(parse_smiles("c1ccccc1"));
  EXPECT_EQ(s.start_size, 6);
  EXPECT_EQ(s.step_count, 0);
}

TEST(Rollouts, SoundAndScaffoldPreserving) {
  Rng rng(2024);
  EnvConfig cfg;
  cfg.max_atoms = 20;
  const char* starts[] = {"C", "c1ccccc1", "C1CCNC1", "O=C1CCCN1", "c1ccc2ccccc2c1", "[S@]", "[N+]"};
  for (int trial = 0; trial < 3000; ++trial) {
    auto start = parse_smiles(starts[trial % std::size(starts)]);
    auto r = random_rollout(rng, start, cfg, 0.05);
    EXPECT_TRUE(r.final.graph.valence_valid());
    EXPECT_TRUE(r.final.graph.is_connected());
    EXPECT_TRUE(contains_subgraph(r.final.graph, start));
    EXPECT_LE(r.final.graph.atom_count(), cfg.max_atoms);
    EXPECT_LE(r.composite_steps, cfg.budget() + 1);
    if (r.final.forced_stop) EXPECT_EQ(r.final.step_count, cfg.budget());
  }
}

TEST(Rollouts, StepBudgetForcesStop) {
  EnvConfig cfg;
  cfg.max_atoms = 10;
  cfg.step_budget = 3;
  auto s = seed_state(AtomToken::carbon());
  for (int i = 0; i < 3; ++i) s = apply(apply(apply(s, 1), 0, cfg), 0, cfg);
  EXPECT_TRUE(s.done());
  EXPECT_TRUE(s.forced_stop);
  EXPECT_EQ(s.graph.atom_count(), 4);
}

TEST(Decompose, SingleCarbon) {
  auto t = decompose(MolecularGraph(AtomToken::carbon()));
  ASSERT_EQ(t.length(), 1);
  EXPECT_EQ(t.actions[0].kind, CompositeAction::Kind::Stop);
}

TEST(Decompose, EthanolAndBenzene) {
  auto eth = parse_smiles("CCO");
  std::vector<int> place;
  auto t = decompose(eth, &place);
  EXPECT_EQ(t.length(), 3);
  EXPECT_EQ(replay(t), eth.permuted(place));
  EXPECT_EQ(t.start.atom(0).element(), Element::O);

  auto benz = parse_smiles("c1ccccc1");
  auto tb = decompose(benz, &place);
  ASSERT_EQ(tb.length(), 7);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(tb.actions[k].kind, CompositeAction::Kind::AddAtom);
  EXPECT_EQ(tb.actions[5].kind, CompositeAction::Kind::Bond);
  auto re = replay(tb);
  EXPECT_EQ(re, benz.permuted(place));
  EXPECT_EQ(write_smiles(re), write_smiles(benz));
}

TEST(Decompose, ReplayEqualsInputOnCorpus) {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    auto g = testutil::random_graph(rng, 1 + static_cast<int>(rng.index(30)), 0.25);
    std::vector<int> place;
    auto t = decompose(g, &place);
    EXPECT_EQ(replay(t), g.permuted(place));
    EXPECT_EQ(t.final_graph, g.permuted(place));
    EXPECT_EQ(t.length(), g.atom_count() - 1 + cycle_rank(g) + 1);
    // same trajectory for any relabelling of the input
    auto p = g.permuted(testutil::random_permutation(rng, g.atom_count()));
    EXPECT_EQ(format_trajectory(decompose(p)), format_trajectory(t));
  }
}

TEST(Decompose, DisconnectedThrows) {
  auto c = AtomToken::carbon();
  EXPECT_THROW(decompose(MolecularGraph::from_parts({c, c}, {})), std::invalid_argument);
}

TEST(TrajectoryLine, FormatAndParse) {
  auto t = decompose(parse_smiles("CC(=O)O"));
  auto line = format_trajectory(t);
  EXPECT_EQ(line, "O\tA:C@0:1\tA:O@1:2\tA:C@1:1\tSTOP");
  auto back = parse_trajectory(line);
  EXPECT_EQ(back.actions, t.actions);
  EXPECT_EQ(back.final_graph, t.final_graph);

  Trajectory ring;
  ring.start = parse_smiles("CCCC[C@@]");
  ring.actions = {CompositeAction::bond(0, 4, 1), CompositeAction::add_atom(3, 5 - 1, 1),
                  CompositeAction::stop()};
  auto rl = format_trajectory(ring);
  auto rb = parse_trajectory(rl);
  EXPECT_EQ(write_smiles(rb.final_graph), write_smiles(replay(ring)));
  EXPECT_THROW(parse_trajectory("C\tA:Xx@0:1"), std::invalid_argument);
  EXPECT_THROW(parse_trajectory("C\tA:C@3:1"), ContractError);
}
