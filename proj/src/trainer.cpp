#include "molbuild/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "molbuild/fingerprint.hpp"
#include "molbuild/sampler.hpp"

namespace molbuild {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// is rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    for (int w = 0; w < std::min(threads, n); ++w) {
      workers.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Mean as r[0] + mean(r - r[0]); exact when all rewards are equal.
double anchored_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double d = 0.0;
  for (double x : v) d += x - v.front();
  return v.front() + d / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

// ---- advantage algebra --------------------------------------------------------

TrajectoryGroup TrajectoryGroup::centered(int start_id, std::vector<double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("empty trajectory group");
  TrajectoryGroup g;
  g.start_id = start_id;
  g.mean = anchored_mean(rewards);
  g.advantages.reserve(rewards.size());
  for (double r : rewards) g.advantages.push_back(r - g.mean);
  g.rewards = std::move(rewards);
  return g;
}

std::vector<double> BaselineState::advantages_then_update(const std::vector<double>& rewards) {
  if (rewards.empty()) return {};
  if (!initialized) {
    value = anchored_mean(rewards);
    initialized = true;
  }
  std::vector<double> adv;
  adv.reserve(rewards.size());
  for (double r : rewards) adv.push_back(r - value);
  for (double r : rewards) value = decay * value + (1.0 - decay) * r;
  return adv;
}

// ---- pre-training -----------------------------------------------------------

std::vector<Trajectory> teacher_trajectories(const std::vector<MolecularGraph>& corpus, const EnvConfig& env) {
  if (corpus.empty()) throw ConfigError("empty training corpus");
  std::vector<Trajectory> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].atom_count() > env.max_atoms)
      throw std::invalid_argument("corpus molecule " + std::to_string(i + 1) + " exceeds the atom cap");
    out.push_back(decompose(corpus[i]));
  }
  return out;
}

double corpus_nll(const Policy& policy, const std::vector<Trajectory>& corpus, const EnvConfig& env) {
  if (corpus.empty()) throw ConfigError("empty training corpus");
  double total = 0.0;
  for (const auto& t : corpus) {
    Tape tape(false);
    total -= policy.score(tape, t, env).logprob.item();
  }
  return total / static_cast<double>(corpus.size());
}

PretrainResult pretrain_mle(Policy& policy, const std::vector<Trajectory>& corpus, const EnvConfig& env,
                            const PretrainConfig& config, const std::function<void(int, double)>& on_epoch) {
  if (corpus.empty()) throw ConfigError("empty training corpus");
  if (config.max_steps < 0 || config.batch_size < 0) throw ConfigError("pretrain sizes must be non-negative");
  const int n = static_cast<int>(corpus.size());
  const int bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);

  AdamConfig ac;
  ac.lr = config.lr;
  ac.clip_norm = config.clip_norm;
  Adam adam(ac);
  PretrainResult result;

  for (int epoch = 0; result.steps < config.max_steps; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::substream(config.seed, "pretrain-order", {static_cast<std::uint64_t>(epoch)});
    rng.shuffle(order);

    double pass_nll = 0.0;
    int seen = 0;
    for (int begin = 0; begin < n && result.steps < config.max_steps; begin += bs) {
      const int end = std::min(n, begin + bs);
      policy.params().zero_grad();
      for (int k = begin; k < end; ++k) {
        Tape tape;
        auto sc = policy.score(tape, corpus[order[k]], env);
        pass_nll -= sc.logprob.item();
        tape.backward(scale(tape, sc.logprob, -1.0 / (end - begin)));
      }
      seen += end - begin;
      adam.step(policy.params());
      ++result.steps;
    }
    double mean = pass_nll / seen;
    result.epoch_nll.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
    if (config.target_nll > 0.0 && mean < config.target_nll && corpus_nll(policy, corpus, env) < config.target_nll)
      break;
  }
  result.final_nll = corpus_nll(policy, corpus, env);
  return result;
}

// ---- evaluation ---------------------------------------------------------------

GeneratedSet generate(const Policy& policy, const std::vector<MolecularGraph>& starts, const EnvConfig& env,
                      const EvalOptions& options) {
  if (options.samples < 1) throw ConfigError("samples per start must be at least 1");
  GeneratedSet set;
  set.starts = starts;
  set.completions.resize(starts.size());
  parallel_for(static_cast<int>(starts.size()), options.threads, [&](int i) {
    if (options.mode == EvalMode::Greedy) {
      set.completions[i].push_back(decode_greedy(policy, starts[i], env).trajectory);
      return;
    }
    for (int s = 0; s < options.samples; ++s) {
      Rng rng = Rng::substream(options.seed, "eval-sample",
                               {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s)});
      set.completions[i].push_back(sample_ancestral(policy, starts[i], env, rng).trajectory);
    }
  });
  return set;
}

EvalResult score_generated(const GeneratedSet& set, const RewardFn& reward, OraclePhase phase) {
  EvalResult out;
  int valid = 0, preserved = 0, success = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < set.starts.size(); ++i) {
    const auto& start = set.starts[i];
    EvalRecord rec;
    rec.start_index = static_cast<int>(i);
    rec.valid = rec.preserved = true;
    bool first = true;
    for (const auto& t : set.completions[i]) {
      const auto& g = t.final_graph;
      bool ok = !g.empty() && g.is_connected() && g.valence_valid();
      rec.valid = rec.valid && ok;
      rec.preserved = rec.preserved && ok && contains_subgraph(g, start);
      if (!ok) continue;
      auto r = reward(g, start, phase);
      if (first || r.reward > rec.reward) {
        rec.best = g;
        rec.reward = r.reward;
        rec.success = r.success;
        first = false;
      }
    }
    valid += rec.valid;
    preserved += rec.preserved;
    success += rec.success;
    total += rec.reward;
    out.records.push_back(std::move(rec));
  }
  auto& s = out.summary;
  s.count = static_cast<int>(set.starts.size());
  if (s.count > 0) {
    s.mean_objective = total / s.count;
    s.success_rate = static_cast<double>(success) / s.count;
    s.validity_rate = static_cast<double>(valid) / s.count;
    s.preservation_rate = static_cast<double>(preserved) / s.count;
  }
  return out;
}

EvalResult evaluate(const Policy& policy, const std::vector<MolecularGraph>& starts, const EnvConfig& env,
                    const RewardFn& reward, const OracleMeter& meter, const EvalOptions& options) {
  const auto before = meter.total();
  auto set = generate(policy, starts, env, options);
  const auto generated = meter.total();
  auto result = score_generated(set, reward);
  result.summary.generation_oracle_calls = generated - before;
  result.summary.scoring_oracle_calls = meter.total() - generated;
  return result;
}

nlohmann::json summary_json(const EvalSummary& s) {
  return {{"count", s.count},
          {"mean_objective", s.mean_objective},
          {"success_rate", s.success_rate},
          {"validity_rate", s.validity_rate},
          {"preservation_rate", s.preservation_rate},
          {"generation_oracle_calls", s.generation_oracle_calls},
          {"scoring_oracle_calls", s.scoring_oracle_calls}};
}

// ---- RL fine-tuning -------------------------------------------------------

void TrainConfig::validate() const {
  if (batch < 1 || group < 1) throw ConfigError("batch and group sizes must be at least 1");
  if (oracle_budget <= 0) throw ConfigError("oracle budget must be positive");
  if (max_epochs < 0 || patience < 0 || val_every < 1 || threads < 1)
    throw ConfigError("epoch, patience, validation interval and thread counts must be non-negative");
  if (!(lr > 0.0) || !(clip_norm > 0.0)) throw ConfigError("learning rate and clip norm must be positive");
  if (!(entropy_coef >= 0.0)) throw ConfigError("entropy coefficient must be non-negative");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw ConfigError("baseline decay must lie in [0, 1)");
}

nlohmann::json metrics_json(const EpochMetrics& m, bool with_wall_time) {
  nlohmann::json j = {{"epoch", m.epoch},
                      {"mean_reward", m.mean_reward},
                      {"mean_advantage", m.mean_advantage},
                      {"adv_std", m.adv_std},
                      {"success_rate", m.success_rate},
                      {"loss", m.loss},
                      {"grad_norm", m.grad_norm},
                      {"trajectories", m.trajectories},
                      {"short_groups", m.short_groups},
                      {"forced_stops", m.forced_stops},
                      {"oracle_calls", m.oracle_calls},
                      {"val_score", finite_or_null(m.val_score)}};
  if (with_wall_time) j["wall_time"] = m.wall_time;
  return j;
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::Budget: return "budget";
    case StopReason::EarlyStop: return "early_stop";
    case StopReason::Numeric: return "numeric";
  }
  return "?";
}

TrainResult train_policy(Policy& policy, const std::vector<MolecularGraph>& train_starts,
                         const std::vector<MolecularGraph>& val_starts, const RewardFn& reward,
                         const OracleMeter& meter, const EnvConfig& env, const TrainConfig& config,
                         const TrainHooks& hooks) {
  config.validate();
  if (train_starts.empty()) throw ConfigError("no training starts");
  const auto clock_start = std::chrono::steady_clock::now();
  const std::int64_t calls_at_start = meter.count(OraclePhase::Train);

  AdamConfig ac;
  ac.lr = config.lr;
  ac.clip_norm = config.clip_norm;
  Adam adam(ac);
  BaselineState baseline{0.0, config.baseline_decay, false};
  TrainResult result;

  const bool validating = !val_starts.empty();
  ParamStore best;
  auto validate_now = [&] {
    EvalOptions opts;
    opts.threads = config.threads;
    return evaluate(policy, val_starts, env, reward, meter, opts).summary.mean_objective;
  };
  if (validating) {
    result.best_val = validate_now();
    result.best_epoch = 0;
    best = policy.params().clone();
  }

  const int n_train = static_cast<int>(train_starts.size());
  const MolecularGraph carbon(AtomToken::carbon());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    // Starts for this epoch.
    std::vector<const MolecularGraph*> starts;
    {
      Rng rng = Rng::substream(config.seed, "train-starts", {static_cast<std::uint64_t>(epoch)});
      std::vector<int> order;
      if (config.mixed_starts) starts.push_back(&carbon);
      while (static_cast<int>(starts.size()) < config.batch) {
        if (order.empty()) {
          order.resize(n_train);
          std::iota(order.begin(), order.end(), 0);
          rng.shuffle(order);
          std::reverse(order.begin(), order.end());
        }
        starts.push_back(&train_starts[order.back()]);
        order.pop_back();
      }
    }
    const int b = static_cast<int>(starts.size());

    // Generation.
    std::vector<SbsSamples> groups(b);
    parallel_for(b, config.threads, [&](int i) {
      Rng rng = Rng::substream(config.seed, "train-sbs",
                               {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i)});
      groups[i] = sample_sbs(policy, *starts[i], env, config.group, rng);
    });
    int total = 0;
    for (const auto& g : groups) total += static_cast<int>(g.samples.size());
    if (meter.count(OraclePhase::Train) - calls_at_start + total > config.oracle_budget) {
      result.reason = StopReason::Budget;
      result.message = "oracle budget reached";
      break;
    }

    // Scoring, in (start, group) order.
    EpochMetrics m;
    m.epoch = epoch;
    std::vector<std::vector<double>> rewards(b);
    std::vector<double> all_rewards;
    int successes = 0;
    for (int i = 0; i < b; ++i) {
      m.short_groups += groups[i].short_group;
      for (const auto& s : groups[i].samples) {
        auto r = reward(s.trajectory.final_graph, *starts[i], OraclePhase::Train);
        rewards[i].push_back(r.reward);
        all_rewards.push_back(r.reward);
        successes += r.success;
        m.forced_stops += s.trajectory.forced_stop;
      }
    }

    // Advantages.
    std::vector<std::vector<double>> adv(b);
    if (config.grouping) {
      for (int i = 0; i < b; ++i) adv[i] = TrajectoryGroup::centered(i, rewards[i]).advantages;
    } else {
      auto flat = baseline.advantages_then_update(all_rewards);
      for (int i = 0, k = 0; i < b; ++i)
        for (std::size_t j = 0; j < rewards[i].size(); ++j) adv[i].push_back(flat[k++]);
    }
    std::vector<double> all_adv;
    for (const auto& a : adv) all_adv.insert(all_adv.end(), a.begin(), a.end());

    // One gradient step over the whole batch.
    const double inv_n = 1.0 / total;
    const bool with_entropy = config.entropy_coef > 0.0;
    policy.params().zero_grad();
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < groups[i].samples.size(); ++j) {
        const double a = adv[i][j];
        if (a == 0.0 && !with_entropy) continue;
        Tape tape;
        auto sc = policy.score(tape, groups[i].samples[j].trajectory, env, with_entropy);
        Tensor term = scale(tape, sc.logprob, -a * inv_n);
        if (with_entropy) term = sub(tape, term, scale(tape, sc.entropy, config.entropy_coef * inv_n));
        loss += term.item();
        tape.backward(term);
      }
    }
    if (!std::isfinite(loss)) {
      result.reason = StopReason::Numeric;
      result.message = "non-finite loss at epoch " + std::to_string(epoch);
      break;
    }
    try {
      m.grad_norm = adam.step(policy.params());
    } catch (const NumericError& e) {
      result.reason = StopReason::Numeric;
      result.message = e.what();
      break;
    }

    m.mean_reward = mean_of(all_rewards);
    m.mean_advantage = mean_of(all_adv);
    m.adv_std = std_of(all_adv);
    m.success_rate = total > 0 ? static_cast<double>(successes) / total : 0.0;
    m.loss = loss;
    m.trajectories = total;
    m.oracle_calls = meter.count(OraclePhase::Train) - calls_at_start;

    bool stop_early = false;
    if (validating && (epoch % config.val_every == 0 || epoch == config.max_epochs)) {
      m.val_score = validate_now();
      if (m.val_score > result.best_val) {
        result.best_val = m.val_score;
        result.best_epoch = epoch;
        best = policy.params().clone();
        if (hooks.on_best) hooks.on_best(m, policy);
      } else if (config.patience > 0 && epoch - result.best_epoch >= config.patience) {
        stop_early = true;
      }
    }
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (stop_early) {
      result.reason = StopReason::EarlyStop;
      result.message = "no validation improvement for " + std::to_string(config.patience) + " epochs";
      break;
    }
  }
  if (validating) policy.params().assign(best);
  return result;
}

}  // namespace molbuild
