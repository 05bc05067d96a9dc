#include "molbuild/sampler.hpp"

namespace molbuild {

Trajectory assemble_trajectory(const MolecularGraph& start, const std::vector<int>& sub_actions,
                               const EnvConfig& env) {
  Trajectory t;
  t.start = start;
  EnvState s = seed_state(start);
  int level0 = -1, level1 = -1;
  for (int a : sub_actions) {
    if (s.done()) throw ContractError("sub-action after episode end");
    switch (s.phase) {
      case Phase::Level0:
        if (a == 0) t.actions.push_back(CompositeAction::stop());
        level0 = a;
        break;
      case Phase::Level1: level1 = a; break;
      case Phase::Level2:
        if (level0 < kLevel0Fixed) t.actions.push_back(CompositeAction::add_atom(level0 - 1, level1, a + 1));
        else t.actions.push_back(CompositeAction::bond(level0 - kLevel0Fixed, level1, a + 1));
        break;
      case Phase::Done: break;
    }
    s = apply(s, a, env);
  }
  if (!s.done()) throw ContractError("sub-action sequence does not finish the episode");
  t.final_graph = s.graph;
  t.forced_stop = s.forced_stop;
  return t;
}

Sample sample_ancestral(const Policy& policy, const MolecularGraph& start, const EnvConfig& env, Rng& rng) {
  EnvState s = seed_state(start);
  std::vector<int> subs;
  double total = 0.0;
  while (!s.done()) {
    auto lp = policy.action_log_probs(s, env);
    std::vector<double> w(lp.size());
    for (std::size_t j = 0; j < lp.size(); ++j) w[j] = std::exp(lp[j]);
    int a = static_cast<int>(rng.categorical(w));
    total += lp[a];
    subs.push_back(a);
    s = apply(s, a, env);
  }
  return {assemble_trajectory(start, subs, env), total};
}

Sample decode_greedy(const Policy& policy, const MolecularGraph& start, const EnvConfig& env) {
  EnvState s = seed_state(start);
  std::vector<int> subs;
  double total = 0.0;
  while (!s.done()) {
    auto lp = policy.action_log_probs(s, env);
    int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    total += lp[best];
    subs.push_back(best);
    s = apply(s, best, env);
  }
  return {assemble_trajectory(start, subs, env), total};
}

std::vector<std::pair<int, double>> ConstructionTree::expand(const Node& n) const {
  auto lp = policy_->action_log_probs(n.state, env_);
  std::vector<std::pair<int, double>> out;
  for (std::size_t j = 0; j < lp.size(); ++j)
    if (std::isfinite(lp[j])) out.emplace_back(static_cast<int>(j), lp[j]);
  return out;
}

ConstructionTree::Node ConstructionTree::child(const Node& n, int a) const {
  Node c{apply(n.state, a, env_), n.subs};
  c.subs.push_back(a);
  return c;
}

SbsSamples sample_sbs(const Policy& policy, const MolecularGraph& start, const EnvConfig& env, int group_size,
                      Rng& rng) {
  ConstructionTree tree(policy, env);
  auto result = stochastic_beam_search(tree, ConstructionTree::Node{seed_state(start), {}}, group_size, rng);
  SbsSamples out;
  out.short_group = result.exhausted;
  for (auto& leaf : result.leaves)
    out.samples.push_back({assemble_trajectory(start, leaf.node.subs, env), leaf.logprob});
  return out;
}

}  // namespace molbuild
