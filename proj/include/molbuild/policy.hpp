#pragma once

// Graph-transformer policy over the three-level construction action.
//
// Node rows: one per atom, plus a virtual node as the last row. Atom input is
// atom-type + degree + selection-flag embeddings (flag tables sel0 / sel1
// mark the atom chosen at Level 0 and Level 1). The virtual row is its own
// embedding plus sel0[1] while an AddAtom choice is pending. Attention
// carries an additive per-head bias indexed by edge type:
//   0 no bond, 1..6 bond order, 7 virtual edge, 8 self.
// Every sublayer is applied as x + alpha * F(x) with alpha starting at 0.

#include <cstdint>
#include <string>
#include <vector>

#include "molbuild/env.hpp"
#include "molbuild/rng.hpp"
#include "molbuild/tensor.hpp"

namespace molbuild {

inline constexpr int kEdgeTypes = 9;
inline constexpr int kEdgeVirtual = 7;
inline constexpr int kEdgeSelf = 8;

struct PolicyConfig {
  int d = 32;
  int layers = 2;
  int heads = 4;
  int max_degree = 6;
  int ffn_mult = 4;

  void validate() const;
  // FNV-1a over the shape-defining fields; stored in checkpoints.
  std::uint64_t digest() const;
};

struct TrajectoryScore {
  Tensor logprob;  // 1 x 1
  Tensor entropy;  // 1 x 1, summed over decisions (zero unless requested)
  std::vector<double> step_logprobs;  // one per composite action
  int decisions = 0;                  // sub-level choices with >1 legal action
};

class Policy {
 public:
  explicit Policy(PolicyConfig config = {}, std::uint64_t seed = 0);

  const PolicyConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  // Deep copy (the default copy shares parameter storage).
  Policy clone() const;

  // (n + 1) x d input rows for the state, virtual node last.
  Tensor input_embeddings(Tape& tape, const EnvState& state) const;
  Tensor encode(Tape& tape, const EnvState& state) const;
  // Raw logits for the state's current level, sized like legal_mask(state).
  Tensor level_logits(Tape& tape, const EnvState& state, const Tensor& latents) const;

  // Masked log-probabilities at the current level (-inf where illegal).
  // Skips the network when only one action is legal.
  std::vector<double> action_log_probs(const EnvState& state, const EnvConfig& env) const;

  // Sum of log-probabilities of every sub-level choice along the trajectory.
  TrajectoryScore score(Tape& tape, const Trajectory& t, const EnvConfig& env, bool with_entropy = false) const;

 private:
  Tensor mlp(Tape& tape, const std::string& prefix, const Tensor& x) const;

  PolicyConfig config_;
  ParamStore params_;
};

// Finite-difference check of the gradient of
//   sum_t (log pi(t) - 0.1 H(t))
// over the given trajectories with respect to every parameter tensor.
GradCheckResult check_score_gradients(Policy& policy, const std::vector<Trajectory>& trajectories,
                                      const EnvConfig& env, const GradCheckOptions& options = {});

// Edge-type grid for the (n + 1) x (n + 1) attention, row-major.
std::vector<int> edge_types(const MolecularGraph& g);

}  // namespace molbuild
