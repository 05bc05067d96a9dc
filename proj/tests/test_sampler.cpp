#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "molbuild/sampler.hpp"
#include "molbuild/smiles.hpp"
#include "test_util.hpp"
#include "toy_tree.hpp"

using namespace molbuild;

namespace {

PolicyConfig small_config() {
  PolicyConfig c;
  c.d = 8;
  c.layers = 1;
  c.heads = 2;
  return c;
}

std::string key(const Trajectory& t) { return format_trajectory(t); }

}  // namespace

TEST(Sbs, TruncatedGumbelHitsTarget) {
  // the family maximum maps exactly to the parent score, order is preserved
  std::vector<double> g{0.3, 1.7, -2.0};
  double z = 1.7, t = 0.25;
  std::vector<double> out;
  for (double x : g) out.push_back(detail::truncate_gumbel(t, x, z));
  EXPECT_DOUBLE_EQ(out[1], t);
  EXPECT_LT(out[0], t);
  EXPECT_LT(out[2], out[0]);
  // direct formula -log(exp(-t) - exp(-z) + exp(-g))
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(out[i], -std::log(std::exp(-t) - std::exp(-z) + std::exp(-g[i])), 1e-12);
}

TEST(Sbs, ExhaustsToyTree) {
  testutil::ToyTree tree;
  Rng rng(1);
  auto r = stochastic_beam_search(tree, {}, 6, rng);
  ASSERT_EQ(r.leaves.size(), 6u);
  EXPECT_FALSE(r.exhausted);
  std::set<std::vector<int>> seen;
  for (const auto& l : r.leaves) {
    seen.insert(l.node);
    EXPECT_NEAR(l.logprob, std::log(tree.leaf_prob(tree.leaf_index(l.node))), 1e-12);
  }
  EXPECT_EQ(seen.size(), 6u);
  auto more = stochastic_beam_search(tree, {}, 10, rng);
  EXPECT_EQ(more.leaves.size(), 6u);
  EXPECT_TRUE(more.exhausted);
}

TEST(Sbs, SingleBeamMatchesLeafDistribution) {
  testutil::ToyTree tree;
  Rng rng(2);
  const int runs = 60000;
  std::vector<int> counts(6, 0);
  for (int r = 0; r < runs; ++r) ++counts[tree.leaf_index(stochastic_beam_search(tree, {}, 1, rng).leaves[0].node)];
  for (int leaf = 0; leaf < 6; ++leaf) {
    double p = tree.leaf_prob(leaf);
    double sigma = std::sqrt(runs * p * (1 - p));
    EXPECT_NEAR(counts[leaf], runs * p, 3 * sigma) << leaf;
  }
}

TEST(Sampler, AssembleMatchesDecompose) {
  auto g = parse_smiles("C1CC1O");
  auto t = decompose(g);
  std::vector<int> subs;
  for (const auto& a : t.actions)
    for (int s : a.sub_actions()) subs.push_back(s);
  auto back = assemble_trajectory(t.start, subs, {});
  EXPECT_EQ(back.actions, t.actions);
  EXPECT_EQ(back.final_graph, t.final_graph);
  subs.pop_back();
  EXPECT_THROW(assemble_trajectory(t.start, subs, {}), ContractError);
}

TEST(Sampler, OnlyLegalActionGivesUniqueTrajectory) {
  Policy p(small_config(), 1);
  EnvConfig env;
  env.max_atoms = 1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto s = sample_ancestral(p, MolecularGraph(AtomToken::from_id(19)), env, rng);
    ASSERT_EQ(s.trajectory.length(), 1);
    EXPECT_EQ(s.logprob, 0.0);
  }
}

TEST(Sampler, SeededAncestralIsReproducible) {
  Policy p(small_config(), 2);
  Rng noise(9);
  testutil::perturb(p.params(), noise, 0.3);
  EnvConfig env;
  env.max_atoms = 15;
  auto start = parse_smiles("c1ccccc1");
  Rng a(5), b(5);
  auto x = sample_ancestral(p, start, env, a);
  auto y = sample_ancestral(p, start, env, b);
  EXPECT_EQ(key(x.trajectory), key(y.trajectory));
  EXPECT_EQ(x.logprob, y.logprob);
  Tape tape(false);
  EXPECT_NEAR(p.score(tape, x.trajectory, env).logprob.item(), x.logprob, 1e-10);
}

TEST(Sampler, GreedyUntrainedStops) {
  Policy p;
  auto s = decode_greedy(p, MolecularGraph(AtomToken::carbon()), {});
  ASSERT_EQ(s.trajectory.length(), 1);
  EXPECT_EQ(s.trajectory.actions[0].kind, CompositeAction::Kind::Stop);
  auto again = decode_greedy(p, parse_smiles("c1ccccc1"), {});
  EXPECT_EQ(again.trajectory.length(), 1);
}

TEST(Sampler, AncestralRolloutsAreValid) {
  Policy p(small_config(), 3);
  EnvConfig env;
  env.max_atoms = 10;
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_ancestral(p, MolecularGraph(AtomToken::carbon()), env, rng);
    EXPECT_TRUE(s.trajectory.final_graph.valence_valid());
    EXPECT_EQ(replay(s.trajectory, env), s.trajectory.final_graph);
  }
}

TEST(Sampler, FirstStepFrequenciesMatchPolicy) {
  Policy p(small_config(), 4);
  Rng noise(3);
  testutil::perturb(p.params(), noise, 1.0);
  EnvConfig env;
  env.max_atoms = 2;
  auto start = MolecularGraph(AtomToken::from_id(19));
  auto lp = p.action_log_probs(seed_state(start), env);
  const int runs = 100000;
  std::vector<int> counts(lp.size(), 0);
  Rng rng(6);
  for (int r = 0; r < runs; ++r) {
    auto s = sample_ancestral(p, start, env, rng);
    const auto& a = s.trajectory.actions[0];
    ++counts[a.kind == CompositeAction::Kind::Stop ? 0 : 1 + a.token];
  }
  for (std::size_t j = 0; j < lp.size(); ++j) {
    double q = std::exp(lp[j]);
    double sigma = std::sqrt(runs * q * (1 - q));
    EXPECT_NEAR(counts[j], runs * q, 3 * sigma + 1e-9) << j;
  }
}

TEST(Sampler, SbsGroupsAreDistinctAndReplayable) {
  Policy p(small_config(), 5);
  Rng noise(4);
  testutil::perturb(p.params(), noise, 0.3);
  EnvConfig env;
  env.max_atoms = 12;
  Rng rng(7);
  for (int call = 0; call < 20; ++call) {
    auto out = sample_sbs(p, parse_smiles("C1CCNC1"), env, 16, rng);
    ASSERT_EQ(out.samples.size(), 16u);
    std::set<std::string> seen;
    for (const auto& s : out.samples) {
      EXPECT_TRUE(seen.insert(key(s.trajectory)).second);
      EXPECT_EQ(replay(s.trajectory, env), s.trajectory.final_graph);
      Tape tape(false);
      EXPECT_NEAR(p.score(tape, s.trajectory, env).logprob.item(), s.logprob, 1e-9);
    }
  }
}

TEST(Sampler, SbsShortGroupWhenTreeIsSmall) {
  Policy p(small_config(), 6);
  EnvConfig env;
  env.max_atoms = 2;
  Rng rng(8);
  // F start: Stop, or one of 23 tokens then a forced single bond and Stop
  auto out = sample_sbs(p, MolecularGraph(AtomToken::from_id(19)), env, 30, rng);
  EXPECT_EQ(out.samples.size(), 24u);
  EXPECT_TRUE(out.short_group);
}
