#pragma once

// Ancestral sampling, greedy decoding and stochastic beam search.
//
// stochastic_beam_search works on any sequence tree:
//   tree.is_terminal(node) -> bool
//   tree.expand(node)      -> vector<pair<Action, double>>  (child, log p(child | node))
//   tree.child(node, a)    -> Node
// Each partial sequence carries a perturbed score G. The root draws
// G ~ Gumbel(0); children draw Gumbels around their own log-probability and are
// shifted so that their maximum equals the parent's G (top-down Gumbel-max).
// The beam keeps the best k by G; finished sequences stay in the beam. The
// surviving finished sequences are a sample without replacement.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <utility>
#include <vector>

#include "molbuild/env.hpp"
#include "molbuild/policy.hpp"
#include "molbuild/rng.hpp"

namespace molbuild {

template <class T>
concept SequenceTree = requires(const T& t, const typename T::Node& n, const typename T::Action& a) {
  { t.is_terminal(n) } -> std::convertible_to<bool>;
  { t.expand(n) } -> std::same_as<std::vector<std::pair<typename T::Action, double>>>;
  { t.child(n, a) } -> std::same_as<typename T::Node>;
};

template <class Node>
struct BeamEntry {
  Node node;
  double logprob = 0.0;
  double key = 0.0;  // perturbed score
};

template <class Node>
struct BeamResult {
  std::vector<BeamEntry<Node>> leaves;  // by descending key
  bool exhausted = false;               // fewer than k leaves exist
};

namespace detail {

// log(1 - exp(x)) for x <= 0.
inline double log1mexp(double x) {
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  return x > -0.6931471805599453 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

// log(1 + exp(x)).
inline double log1pexp(double x) { return x > 33.0 ? x : std::log1p(std::exp(x)); }

// Shifts a child's Gumbel sample g so the family maximum z maps to target t.
inline double truncate_gumbel(double t, double g, double z) {
  double v = t - g + log1mexp(g - z);
  return t - std::max(0.0, v) - log1pexp(-std::abs(v));
}

}  // namespace detail

template <SequenceTree Tree>
BeamResult<typename Tree::Node> stochastic_beam_search(const Tree& tree, typename Tree::Node root, int k,
                                                       Rng& rng) {
  using Node = typename Tree::Node;
  using Action = typename Tree::Action;
  if (k < 1) throw std::invalid_argument("beam width must be at least 1");

  std::vector<BeamEntry<Node>> beam;
  beam.push_back({std::move(root), 0.0, rng.gumbel()});

  struct Candidate {
    int parent;  // -1 for a finished entry carried over from beam[self]
    Action action{};
    int self = -1;
    double logprob;
    double key;
  };

  while (true) {
    bool open = false;
    for (const auto& e : beam) open = open || !tree.is_terminal(e.node);
    if (!open) break;

    std::vector<Candidate> cands;
    for (int i = 0; i < static_cast<int>(beam.size()); ++i) {
      const auto& e = beam[i];
      if (tree.is_terminal(e.node)) {
        cands.push_back({-1, Action{}, i, e.logprob, e.key});
        continue;
      }
      auto children = tree.expand(e.node);
      if (children.empty()) continue;
      std::vector<double> g(children.size());
      double z = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < children.size(); ++c) {
        g[c] = e.logprob + children[c].second + rng.gumbel();
        z = std::max(z, g[c]);
      }
      for (std::size_t c = 0; c < children.size(); ++c)
        cands.push_back({i, children[c].first, -1, e.logprob + children[c].second,
                         detail::truncate_gumbel(e.key, g[c], z)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.key > b.key; });
    if (static_cast<int>(cands.size()) > k) cands.resize(k);

    std::vector<BeamEntry<Node>> next;
    next.reserve(cands.size());
    for (auto& c : cands) {
      if (c.parent < 0) next.push_back(beam[c.self]);
      else next.push_back({tree.child(beam[c.parent].node, c.action), c.logprob, c.key});
    }
    beam = std::move(next);
  }
  std::stable_sort(beam.begin(), beam.end(), [](const auto& a, const auto& b) { return a.key > b.key; });
  BeamResult<Node> out;
  out.exhausted = static_cast<int>(beam.size()) < k;
  out.leaves = std::move(beam);
  return out;
}

// ---- molecule construction ------------------------------------------------

struct Sample {
  Trajectory trajectory;
  double logprob = 0.0;
};

// Regroups a flat sub-action sequence into composite actions.
Trajectory assemble_trajectory(const MolecularGraph& start, const std::vector<int>& sub_actions,
                               const EnvConfig& env);

Sample sample_ancestral(const Policy& policy, const MolecularGraph& start, const EnvConfig& env, Rng& rng);
// Argmax at every sub-level; ties go to the lowest action index.
Sample decode_greedy(const Policy& policy, const MolecularGraph& start, const EnvConfig& env);

struct SbsSamples {
  std::vector<Sample> samples;
  bool short_group = false;  // tree had fewer than G leaves
};

SbsSamples sample_sbs(const Policy& policy, const MolecularGraph& start, const EnvConfig& env, int group_size,
                      Rng& rng);

// The construction MDP seen as a sequence tree over sub-actions.
class ConstructionTree {
 public:
  struct Node {
    EnvState state;
    std::vector<int> subs;
  };
  using Action = int;

  ConstructionTree(const Policy& policy, const EnvConfig& env) : policy_(&policy), env_(env) {}

  bool is_terminal(const Node& n) const { return n.state.done(); }
  std::vector<std::pair<int, double>> expand(const Node& n) const;
  Node child(const Node& n, int a) const;

 private:
  const Policy* policy_;
  EnvConfig env_;
};

}  // namespace molbuild
