#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "molbuild/fingerprint.hpp"
#include "molbuild/sampler.hpp"
#include "molbuild/smiles.hpp"
#include "molbuild/trainer.hpp"
#include "test_util.hpp"

using namespace molbuild;

namespace {

PolicyConfig tiny() { return {8, 1, 2, 6, 2}; }

EnvConfig small_env() {
  EnvConfig env;
  env.max_atoms = 10;
  return env;
}

std::vector<MolecularGraph> scaffolds() {
  std::vector<MolecularGraph> out;
  for (const char* s : {"c1ccccc1", "C1CCNCC1", "c1ccncc1", "C1CC1", "C1CCOC1"}) out.push_back(parse_smiles(s));
  return out;
}

// Kinase proxy reward with its own meter.
struct ProxyOracle {
  OracleMeter meter;
  RewardFunction fn{RewardSpec{}, meter};
  RewardFn bind() {
    return [this](const MolecularGraph& c, const MolecularGraph& s, OraclePhase p) { return fn(c, s, p); };
  }
};

std::vector<double> flat_values(const ParamStore& p) {
  std::vector<double> out;
  for (const auto& [name, t] : p.items()) {
    auto v = t.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace

// ---- advantage algebra --------------------------------------------------------

TEST(Advantages, CenteringExample) {
  auto g = TrajectoryGroup::centered(0, {0.2, 0.4, 0.6});
  EXPECT_NEAR(g.mean, 0.4, 1e-15);
  EXPECT_NEAR(g.advantages[0], -0.2, 1e-15);
  EXPECT_NEAR(g.advantages[1], 0.0, 1e-15);
  EXPECT_NEAR(g.advantages[2], 0.2, 1e-15);
}

TEST(Advantages, EmptyGroupRejected) {
  EXPECT_THROW(TrajectoryGroup::centered(0, {}), std::invalid_argument);
}

TEST(Advantages, EqualRewardsGiveZero) {
  auto g = TrajectoryGroup::centered(0, std::vector<double>(16, 0.37));
  for (double a : g.advantages) EXPECT_EQ(a, 0.0);
}

TEST(Advantages, SumIsZero) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(1 + rng.index(32));
    for (auto& x : r) x = rng.uniform() * 10.0 - 5.0;
    auto g = TrajectoryGroup::centered(trial, r);
    EXPECT_LT(std::abs(std::accumulate(g.advantages.begin(), g.advantages.end(), 0.0)), 1e-9);
  }
}

TEST(Advantages, ShiftInvariantOnRepresentableRewards) {
  // Dyadic rewards and shifts keep every sum exact, so equality is bitwise.
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(16);
    for (auto& x : r) x = static_cast<double>(rng.index(1024)) / 1024.0;
    double c = static_cast<double>(rng.index(256)) / 64.0 - 2.0;
    std::vector<double> shifted = r;
    for (auto& x : shifted) x += c;
    EXPECT_EQ(TrajectoryGroup::centered(0, shifted).advantages, TrajectoryGroup::centered(0, r).advantages);
  }
}

TEST(Advantages, ShiftInvariantGeneralRewards) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(1 + rng.index(20));
    for (auto& x : r) x = rng.uniform();
    double c = rng.uniform() * 4.0 - 2.0;
    auto a = TrajectoryGroup::centered(0, r).advantages;
    for (auto& x : r) x += c;
    auto b = TrajectoryGroup::centered(0, r).advantages;
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
  }
}

TEST(Advantages, ScaleWithoutStdDivision) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(16);
    for (auto& x : r) x = static_cast<double>(rng.index(1024)) / 1024.0;
    double s = std::ldexp(1.0, static_cast<int>(rng.index(7)) - 3);
    auto a = TrajectoryGroup::centered(0, r).advantages;
    for (auto& x : r) x *= s;
    auto b = TrajectoryGroup::centered(0, r).advantages;
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(b[j], s * a[j]);
  }
}

TEST(Baseline, FirstBatchMeanThenEma) {
  BaselineState b{0.0, 0.5, false};
  auto a = b.advantages_then_update({1.0, 3.0});
  EXPECT_EQ(a, (std::vector<double>{-1.0, 1.0}));
  // 2 -> 0.5*2 + 0.5*1 = 1.5 -> 0.5*1.5 + 0.5*3 = 2.25
  EXPECT_DOUBLE_EQ(b.value, 2.25);
  a = b.advantages_then_update({2.25});
  EXPECT_EQ(a, (std::vector<double>{0.0}));
}

// ---- pre-training -----------------------------------------------------------

TEST(Pretrain, EmptyCorpusIsConfigError) {
  EXPECT_THROW(teacher_trajectories({}, EnvConfig{}), ConfigError);
  Policy p(tiny(), 1);
  EXPECT_THROW(pretrain_mle(p, {}, EnvConfig{}, {}), ConfigError);
}

TEST(Pretrain, SingleCarbonInitialNllIsLogK) {
  EnvConfig env;
  auto corpus = teacher_trajectories({MolecularGraph(AtomToken::carbon())}, env);
  ASSERT_EQ(corpus[0].actions.size(), 1u);
  auto mask = legal_mask(seed_state(corpus[0].start), env);
  EXPECT_EQ(mask.legal_count(), 24);
  Policy p(PolicyConfig{}, 5);
  EXPECT_NEAR(corpus_nll(p, corpus, env), std::log(24.0), 1e-12);
}

TEST(Pretrain, AtomCapEnforced) {
  EnvConfig env;
  env.max_atoms = 3;
  EXPECT_THROW(teacher_trajectories({parse_smiles("CCCC")}, env), std::invalid_argument);
}

TEST(Pretrain, OverfitsSingleMolecule) {
  EnvConfig env;
  auto mol = parse_smiles("OCCN");
  auto corpus = teacher_trajectories({mol}, env);
  Policy p(PolicyConfig{}, 9);
  PretrainConfig cfg;
  cfg.max_steps = 400;
  cfg.target_nll = 0.01;
  auto res = pretrain_mle(p, corpus, env, cfg);
  EXPECT_LT(res.final_nll, 0.01);
  EXPECT_LT(res.epoch_nll.back(), res.epoch_nll.front());
  auto out = decode_greedy(p, corpus[0].start, env);
  EXPECT_EQ(write_smiles(out.trajectory.final_graph), write_smiles(mol));
}

// ---- evaluation ---------------------------------------------------------------

TEST(Evaluate, UntrainedPolicyKeepsScaffolds) {
  ProxyOracle oracle;
  Policy p(tiny(), 3);
  auto starts = scaffolds();
  auto res = evaluate(p, starts, small_env(), oracle.bind(), oracle.meter);
  EXPECT_EQ(res.summary.count, 5);
  EXPECT_EQ(res.summary.validity_rate, 1.0);
  EXPECT_EQ(res.summary.preservation_rate, 1.0);
  EXPECT_EQ(res.summary.generation_oracle_calls, 0);
  EXPECT_EQ(res.summary.scoring_oracle_calls, 5);
  EXPECT_EQ(oracle.meter.count(OraclePhase::Eval), 5);
  for (const auto& r : res.records) EXPECT_EQ(r.best, starts[r.start_index]);
}

TEST(Evaluate, NoSuccessGivesZeroRate) {
  OracleMeter meter;
  RewardFn never = [&](const MolecularGraph&, const MolecularGraph&, OraclePhase p) {
    meter.record(p);
    return RewardResult{0.3, false};
  };
  Policy p(tiny(), 3);
  auto res = evaluate(p, scaffolds(), small_env(), never, meter);
  EXPECT_EQ(res.summary.success_rate, 0.0);
  EXPECT_DOUBLE_EQ(res.summary.mean_objective, 0.3);
}

TEST(Evaluate, SampleModeIsSeededAndValid) {
  ProxyOracle oracle;
  Policy p(tiny(), 3);
  Rng init(8);
  testutil::perturb(p.params(), init, 0.5);
  EvalOptions opts;
  opts.mode = EvalMode::Sample;
  opts.samples = 4;
  opts.seed = 17;
  auto a = generate(p, scaffolds(), small_env(), opts);
  opts.threads = 3;
  auto b = generate(p, scaffolds(), small_env(), opts);
  for (std::size_t i = 0; i < a.completions.size(); ++i) {
    ASSERT_EQ(a.completions[i].size(), 4u);
    for (int s = 0; s < 4; ++s)
      EXPECT_EQ(format_trajectory(a.completions[i][s]), format_trajectory(b.completions[i][s]));
  }
  auto res = score_generated(a, oracle.bind());
  EXPECT_EQ(res.summary.validity_rate, 1.0);
  EXPECT_EQ(res.summary.preservation_rate, 1.0);
}

// ---- RL fine-tuning -------------------------------------------------------

TEST(Train, ConfigValidation) {
  TrainConfig c;
  c.group = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.oracle_budget = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.baseline_decay = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, EqualRewardsLeaveParametersUnchanged) {
  for (bool grouping : {true, false}) {
    OracleMeter meter;
    RewardFn constant = [&](const MolecularGraph&, const MolecularGraph&, OraclePhase p) {
      meter.record(p);
      return RewardResult{0.42, false};
    };
    Policy p(tiny(), 4);
    Rng rng(5);
    testutil::perturb(p.params(), rng, 0.3);
    auto before = flat_values(p.params());
    TrainConfig cfg;
    cfg.batch = 3;
    cfg.group = 4;
    cfg.max_epochs = 3;
    cfg.grouping = grouping;
    train_policy(p, scaffolds(), {}, constant, meter, small_env(), cfg);
    EXPECT_EQ(flat_values(p.params()), before) << grouping;
  }
}

TEST(Train, OracleAccountingMatchesLog) {
  ProxyOracle oracle;
  Policy p(tiny(), 6);
  TrainConfig cfg;
  cfg.batch = 3;
  cfg.group = 5;
  cfg.max_epochs = 4;
  cfg.lr = 1e-2;
  auto res = train_policy(p, scaffolds(), {}, oracle.bind(), oracle.meter, small_env(), cfg);
  ASSERT_EQ(res.log.size(), 4u);
  std::int64_t sum = 0;
  for (const auto& m : res.log) {
    EXPECT_LE(m.trajectories, cfg.batch * cfg.group);
    if (m.short_groups == 0) EXPECT_EQ(m.trajectories, cfg.batch * cfg.group);
    sum += m.trajectories;
    EXPECT_EQ(m.oracle_calls, sum);
    EXPECT_LT(std::abs(m.mean_advantage), 1e-9);
  }
  EXPECT_EQ(oracle.meter.count(OraclePhase::Train), sum);
  EXPECT_EQ(oracle.meter.count(OraclePhase::Eval), 0);
  EXPECT_EQ(res.reason, StopReason::MaxEpochs);
}

TEST(Train, BudgetStopsBeforeScoring) {
  ProxyOracle oracle;
  Policy p(tiny(), 6);
  TrainConfig cfg;
  cfg.batch = 10;
  cfg.group = 16;
  cfg.oracle_budget = 100;
  auto res = train_policy(p, scaffolds(), {}, oracle.bind(), oracle.meter, small_env(), cfg);
  EXPECT_EQ(res.reason, StopReason::Budget);
  EXPECT_LE(oracle.meter.count(OraclePhase::Train), 100);

  ProxyOracle second;
  cfg.batch = 2;
  cfg.group = 4;
  cfg.oracle_budget = 30;
  res = train_policy(p, scaffolds(), {}, second.bind(), second.meter, small_env(), cfg);
  EXPECT_EQ(res.reason, StopReason::Budget);
  EXPECT_LE(second.meter.count(OraclePhase::Train), 30);
  EXPECT_GE(res.log.size(), 3u);
}

TEST(Train, ReproducibleLogs) {
  auto run = [](int threads) {
    ProxyOracle oracle;
    Policy p(tiny(), 7);
    TrainConfig cfg;
    cfg.batch = 3;
    cfg.group = 4;
    cfg.max_epochs = 3;
    cfg.lr = 1e-2;
    cfg.seed = 99;
    cfg.threads = threads;
    std::string out;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) { out += metrics_json(m).dump() + "\n"; };
    auto starts = scaffolds();
    train_policy(p, starts, {starts[0], starts[1]}, oracle.bind(), oracle.meter, small_env(), cfg, hooks);
    return out;
  };
  auto a = run(1);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(2));
}

TEST(Train, ReinforceUsesGlobalBaseline) {
  ProxyOracle oracle;
  Policy p(tiny(), 8);
  TrainConfig cfg;
  cfg.batch = 3;
  cfg.group = 4;
  cfg.max_epochs = 3;
  cfg.grouping = false;
  auto res = train_policy(p, scaffolds(), {}, oracle.bind(), oracle.meter, small_env(), cfg);
  // First batch: baseline equals the batch mean.
  EXPECT_LT(std::abs(res.log[0].mean_advantage), 1e-12);
}

TEST(Train, NonFiniteRewardAbortsCleanly) {
  OracleMeter meter;
  RewardFn bad = [&](const MolecularGraph& c, const MolecularGraph&, OraclePhase p) {
    meter.record(p);
    return RewardResult{c.atom_count() > 6 ? std::nan("") : 0.5, false};
  };
  Policy p(tiny(), 4);
  Rng rng(5);
  testutil::perturb(p.params(), rng, 0.3);
  auto before = flat_values(p.params());
  TrainConfig cfg;
  cfg.batch = 3;
  cfg.group = 8;
  cfg.max_epochs = 2;
  auto res = train_policy(p, scaffolds(), {}, bad, meter, small_env(), cfg);
  EXPECT_EQ(res.reason, StopReason::Numeric);
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(flat_values(p.params()), before);
}

TEST(Train, EntropyOfUniformFourWayChoice) {
  // Adding a carbon to methane: bond orders 1..4 are legal.
  Policy p(PolicyConfig{}, 1);
  EnvConfig env;
  auto s = apply(seed_state(AtomToken::carbon()), 1, env);
  ASSERT_EQ(s.phase, Phase::Level1);
  s = apply(s, 0, env);
  ASSERT_EQ(s.phase, Phase::Level2);
  auto mask = legal_mask(s, env);
  ASSERT_EQ(mask.legal_count(), 4);
  Tape tape(false);
  auto h = masked_entropy(tape, p.level_logits(tape, s, p.encode(tape, s)), mask.legal);
  EXPECT_NEAR(h.item(), std::log(4.0), 1e-12);
}

TEST(Train, ValidationRestoresBest) {
  ProxyOracle oracle;
  Policy p(tiny(), 10);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.group = 4;
  cfg.max_epochs = 6;
  cfg.lr = 5e-2;
  cfg.patience = 2;
  auto starts = scaffolds();
  std::vector<MolecularGraph> val{starts[0], starts[2]};
  auto res = train_policy(p, starts, val, oracle.bind(), oracle.meter, small_env(), cfg);
  ASSERT_GE(res.best_epoch, 0);
  EXPECT_EQ(oracle.meter.count(OraclePhase::Eval), static_cast<std::int64_t>(val.size()) * (res.log.size() + 1));
  ProxyOracle check;
  auto ev = evaluate(p, val, small_env(), check.bind(), check.meter);
  EXPECT_DOUBLE_EQ(ev.summary.mean_objective, res.best_val);
}
