#pragma once

// Teacher-forced pre-training, group-relative and global-baseline policy
// gradient fine-tuning, and two-pass evaluation.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "molbuild/env.hpp"
#include "molbuild/policy.hpp"
#include "molbuild/rewards.hpp"

namespace molbuild {

// Scores a completed candidate against its start. Implementations record
// their own oracle calls.
using RewardFn = std::function<RewardResult(const MolecularGraph& candidate, const MolecularGraph& start, OraclePhase)>;

// ---- advantage algebra --------------------------------------------------------

struct TrajectoryGroup {
  int start_id = 0;
  std::vector<double> rewards;
  double mean = 0.0;
  std::vector<double> advantages;  // rewards - mean

  // Throws std::invalid_argument on an empty group.
  static TrajectoryGroup centered(int start_id, std::vector<double> rewards);
};

// Exponential moving average of rewards. The first batch sets it to the batch
// mean; afterwards each reward moves it by (1 - decay).
struct BaselineState {
  double value = 0.0;
  double decay = 0.99;
  bool initialized = false;

  // Advantages against the current baseline, then folds the rewards in.
  std::vector<double> advantages_then_update(const std::vector<double>& rewards);
};

// ---- pre-training -----------------------------------------------------------

struct PretrainConfig {
  int max_steps = 2000;
  int batch_size = 0;       // 0: whole corpus per step
  double lr = 1e-3;
  double clip_norm = 1.0;
  double target_nll = 0.0;  // stop once the corpus NLL drops below (0: never)
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> epoch_nll;  // mean per-trajectory NLL seen in each pass
  int steps = 0;
  double final_nll = 0.0;         // full-corpus NLL after the last step
};

// Canonical trajectories for a corpus. Throws ConfigError on an empty corpus
// and std::invalid_argument when a molecule exceeds the atom cap.
std::vector<Trajectory> teacher_trajectories(const std::vector<MolecularGraph>& corpus, const EnvConfig& env);

// Mean per-trajectory negative log-likelihood.
double corpus_nll(const Policy& policy, const std::vector<Trajectory>& corpus, const EnvConfig& env);

PretrainResult pretrain_mle(Policy& policy, const std::vector<Trajectory>& corpus, const EnvConfig& env,
                            const PretrainConfig& config,
                            const std::function<void(int epoch, double nll)>& on_epoch = {});

// ---- evaluation ---------------------------------------------------------------

enum class EvalMode { Greedy, Sample };

struct EvalOptions {
  EvalMode mode = EvalMode::Greedy;
  int samples = 1;  // Sample mode: completions per start, best reported
  std::uint64_t seed = 0;
  int threads = 1;
};

struct GeneratedSet {
  std::vector<MolecularGraph> starts;
  std::vector<std::vector<Trajectory>> completions;  // per start
};

struct EvalRecord {
  int start_index = 0;
  MolecularGraph best;
  double reward = 0.0;
  bool success = false;
  bool valid = false;
  bool preserved = false;
};

struct EvalSummary {
  int count = 0;
  double mean_objective = 0.0;
  double success_rate = 0.0;
  double validity_rate = 0.0;
  double preservation_rate = 0.0;
  std::int64_t generation_oracle_calls = 0;
  std::int64_t scoring_oracle_calls = 0;
};

struct EvalResult {
  std::vector<EvalRecord> records;
  EvalSummary summary;
};

// Generation pass; never touches an oracle.
GeneratedSet generate(const Policy& policy, const std::vector<MolecularGraph>& starts, const EnvConfig& env,
                      const EvalOptions& options = {});
// Scoring pass.
EvalResult score_generated(const GeneratedSet& set, const RewardFn& reward, OraclePhase phase = OraclePhase::Eval);
// Both passes; the summary reports the meter delta of each.
EvalResult evaluate(const Policy& policy, const std::vector<MolecularGraph>& starts, const EnvConfig& env,
                    const RewardFn& reward, const OracleMeter& meter, const EvalOptions& options = {});

nlohmann::json summary_json(const EvalSummary& s);

// ---- RL fine-tuning -------------------------------------------------------

struct TrainConfig {
  int batch = 10;   // starts per epoch
  int group = 16;   // completions per start (beam width)
  double lr = 1e-4;
  double clip_norm = 1.0;
  double entropy_coef = 0.0;
  bool grouping = true;  // false: global moving-average baseline
  double baseline_decay = 0.99;
  int max_epochs = 500;
  std::int64_t oracle_budget = 50000;  // training-phase calls
  int patience = 20;    // epochs without validation improvement (0: off)
  int val_every = 1;
  bool mixed_starts = false;  // one single-carbon start per batch
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_advantage = 0.0;
  double adv_std = 0.0;
  double success_rate = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  int trajectories = 0;
  int short_groups = 0;
  int forced_stops = 0;
  std::int64_t oracle_calls = 0;  // cumulative training-phase calls
  double val_score = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;
};

nlohmann::json metrics_json(const EpochMetrics& m, bool with_wall_time = false);

enum class StopReason { MaxEpochs, Budget, EarlyStop, Numeric };
std::string stop_reason_name(StopReason r);

struct TrainResult {
  std::vector<EpochMetrics> log;
  StopReason reason = StopReason::MaxEpochs;
  std::string message;
  int best_epoch = -1;
  double best_val = -std::numeric_limits<double>::infinity();
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  // Called with the current policy whenever validation improves.
  std::function<void(const EpochMetrics&, const Policy&)> on_best;
};

// One Adam step per epoch on
//   -(1/N) sum_j A_j log pi(O_j) - beta (1/N) sum_j H(O_j)
// over the N sampled trajectories. With a validation set the best-scoring
// parameters are restored at the end. On a numeric failure the policy keeps
// its last good parameters and the reason is Numeric.
TrainResult train_policy(Policy& policy, const std::vector<MolecularGraph>& train_starts,
                         const std::vector<MolecularGraph>& val_starts, const RewardFn& reward,
                         const OracleMeter& meter, const EnvConfig& env, const TrainConfig& config,
                         const TrainHooks& hooks = {});

}  // namespace molbuild
