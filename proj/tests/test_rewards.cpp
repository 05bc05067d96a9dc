#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "molbuild/fingerprint.hpp"
#include "molbuild/rewards.hpp"
#include "molbuild/smiles.hpp"
#include "test_util.hpp"

using namespace molbuild;

TEST(Components, SingleCarbon) {
  MolecularGraph c(AtomToken::carbon());
  EXPECT_DOUBLE_EQ(mol_weight(c), 12.011);
  EXPECT_EQ(hbd_count(c), 0);
  EXPECT_EQ(ring_count(c), 0);
}

TEST(Components, LoneOxygenIsDonor) {
  EXPECT_EQ(hbd_count(parse_smiles("O")), 1);
  EXPECT_EQ(hbd_count(parse_smiles("COC")), 0);
  EXPECT_EQ(hbd_count(parse_smiles("CC(=O)[O-]")), 0);
  EXPECT_EQ(hbd_count(parse_smiles("NCCO")), 2);
}

TEST(Components, BenzeneHasOneRing) {
  EXPECT_EQ(ring_count(parse_smiles("c1ccccc1")), 1);
  EXPECT_EQ(ring_count(parse_smiles("c1ccc2ccccc2c1")), 2);
}

TEST(Components, HeavyAtomMassOnly) {
  EXPECT_NEAR(mol_weight(parse_smiles("CCO")), 2 * 12.011 + 15.999, 1e-9);
}

TEST(Components, LogpIsTokenSum) {
  EXPECT_NEAR(logp_proxy(parse_smiles("CCl")), 0.20 + 0.70, 1e-12);
  EXPECT_NEAR(logp_proxy(parse_smiles("C[N+](C)(C)C")), 4 * 0.20 - 1.50, 1e-12);
}

TEST(Components, SaFormula) {
  // six atoms, one ring, nothing else
  double x = 0.04 * 6 + 0.3;
  EXPECT_NEAR(sa_proxy(parse_smiles("c1ccccc1")), 1.0 + 9.0 * x / (x + 4.0), 1e-12);
  // ten-membered ring trips the macrocycle term
  x = 0.04 * 10 + 0.3 + 1.5;
  EXPECT_NEAR(sa_proxy(parse_smiles("C1CCCCCCCCC1")), 1.0 + 9.0 * x / (x + 4.0), 1e-12);
}

TEST(Components, RotatableBonds) {
  EXPECT_EQ(rotatable_bonds(parse_smiles("CCCC")), 1);
  EXPECT_EQ(rotatable_bonds(parse_smiles("CCOC(=O)c1ccccc1")), 3);
  EXPECT_EQ(rotatable_bonds(parse_smiles("C1CCCCC1")), 0);
}

TEST(Components, Macrocycle) {
  EXPECT_FALSE(has_macrocycle(parse_smiles("C1CCCCCCC1")));
  EXPECT_TRUE(has_macrocycle(parse_smiles("C1CCCCCCCC1")));
  // fused bicycle: every bond sits on a small ring
  EXPECT_FALSE(has_macrocycle(parse_smiles("c1ccc2ccccc2c1")));
}

TEST(Components, Alerts) {
  EXPECT_EQ(alert_count(parse_smiles("CC(=O)N")), 0);
  EXPECT_EQ(alert_count(parse_smiles("CNN")), 1);
  EXPECT_EQ(alert_count(parse_smiles("CC(N)N")), 1);
  EXPECT_EQ(alert_count(parse_smiles("ClCCl")), 1);
  EXPECT_EQ(alert_count(parse_smiles("CSSC")), 1);
  EXPECT_EQ(alert_count(parse_smiles("c1ccccc1Cl")), 0);
  EXPECT_EQ(alert_count(parse_smiles("CP")), 1);
  EXPECT_EQ(alert_count(parse_smiles("CP(=O)(O)O")), 0);
  EXPECT_EQ(alert_count(parse_smiles("CC(=S)C")), 1);
  EXPECT_EQ(alert_count(parse_smiles("CS(=O)(=O)N")), 0);
  EXPECT_EQ(alert_count(parse_smiles("CC(=O)C(=O)C")), 1);
}

TEST(Components, BundledFileMatchesBuiltinTable) {
  auto t = load_logp_table(std::filesystem::path(MOLBUILD_DATA_DIR) / "logp_contributions.tsv");
  EXPECT_EQ(t, default_logp_table());
}

TEST(Components, RangesAndPermutationInvariance) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = testutil::random_graph(rng, 1 + static_cast<int>(rng.index(30)));
    for (const auto& c : component_library()) {
      double v = c.compute(g);
      EXPECT_TRUE(std::isfinite(v)) << c.name;
      EXPECT_GE(v, c.lo) << c.name;
      EXPECT_LE(v, c.hi) << c.name;
      for (int p = 0; p < 5; ++p) {
        auto h = g.permuted(testutil::random_permutation(rng, g.atom_count()));
        EXPECT_EQ(c.compute(h), v) << c.name;
      }
    }
  }
}

TEST(KinaseMpo, ThresholdExample) {
  auto v = kinase_mpo({0.5, 0.5, 0.6, 4.0});
  EXPECT_NEAR(v.reward, 0.5667, 5e-5);
  EXPECT_TRUE(v.success);
}

TEST(KinaseMpo, SaNormalisation) {
  EXPECT_DOUBLE_EQ(sa_prime(10.0), 0.0);
  EXPECT_DOUBLE_EQ(sa_prime(1.0), 1.0);
}

TEST(KinaseMpo, Maximum) {
  auto v = kinase_mpo({1.0, 1.0, 1.0, 1.0});
  EXPECT_DOUBLE_EQ(v.reward, 1.0);
  EXPECT_TRUE(v.success);
}

TEST(KinaseMpo, EachThresholdMatters) {
  EXPECT_FALSE(kinase_mpo({0.49, 0.5, 0.6, 4.0}).success);
  EXPECT_FALSE(kinase_mpo({0.5, 0.49, 0.6, 4.0}).success);
  EXPECT_FALSE(kinase_mpo({0.5, 0.5, 0.59, 4.0}).success);
  EXPECT_FALSE(kinase_mpo({0.5, 0.5, 0.6, 4.01}).success);
}

TEST(KinaseMpo, MonotoneInEachComponent) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    KinaseComponents c{rng.uniform(), rng.uniform(), rng.uniform(), 1.0 + 9.0 * rng.uniform()};
    double base = kinase_mpo(c).reward;
    double step = 0.1 * rng.uniform();
    auto up = c;
    up.gsk3b = std::min(1.0, c.gsk3b + step);
    EXPECT_GE(kinase_mpo(up).reward, base);
    up = c;
    up.jnk3 = std::min(1.0, c.jnk3 + step);
    EXPECT_GE(kinase_mpo(up).reward, base);
    up = c;
    up.qed = std::min(1.0, c.qed + step);
    EXPECT_GE(kinase_mpo(up).reward, base);
    up = c;
    up.sa = std::max(1.0, c.sa - step);  // lower SA is better
    EXPECT_GE(kinase_mpo(up).reward, base);
  }
}

TEST(Prodrug, FormulaExamples) {
  EXPECT_NEAR((ProdrugTerms{2.0, 1.0, 1.0, 0.6, 450.0}).total(), 5.2, 1e-12);
  EXPECT_NEAR((ProdrugTerms{2.0, 1.0, 1.0, 0.6, 650.0}).total(), 0.2, 1e-12);
  EXPECT_NEAR((ProdrugTerms{0.0, 0.0, 0.0, 0.5, 600.0}).total(), 1.0, 1e-12);
}

TEST(Prodrug, IdentityIsTwiceQed) {
  for (const char* s : {"Oc1ccccc1", "CC(=O)Oc1ccccc1C(=O)O", "NCCc1ccc(O)c(O)c1", "C"}) {
    auto p = parse_smiles(s);
    EXPECT_EQ(prodrug_terms(p, p).total(), 2.0 * qed_proxy(p)) << s;
  }
}

TEST(Prodrug, NewEsterCounts) {
  auto parent = parse_smiles("Oc1ccccc1");
  auto cand = parse_smiles("CC(=O)Oc1ccccc1");
  auto t = prodrug_terms(cand, parent);
  EXPECT_EQ(t.cleave, 1.0);
  EXPECT_EQ(t.delta_hbd, 1.0);
  EXPECT_NEAR(t.delta_logp, 2 * 0.20 - 0.40, 1e-12);
}

TEST(Prodrug, ExistingLinkageNeedsSwitch) {
  auto p = parse_smiles("CC(=O)Oc1ccccc1");
  EXPECT_EQ(cleavable_indicator(p, p, true), 0.0);
  EXPECT_EQ(cleavable_indicator(p, p, false), 1.0);
}

TEST(Prodrug, LinkageKinds) {
  auto phenol = parse_smiles("Oc1ccccc1");
  auto aniline = parse_smiles("Nc1ccccc1");
  EXPECT_EQ(cleavable_indicator(parse_smiles("COC(=O)Oc1ccccc1"), phenol), 1.0);   // carbonate
  EXPECT_EQ(cleavable_indicator(parse_smiles("COC(=O)Nc1ccccc1"), aniline), 1.0);  // carbamate
  EXPECT_EQ(cleavable_indicator(parse_smiles("CC(=O)Nc1ccccc1"), aniline), 1.0);   // amide
  EXPECT_EQ(cleavable_indicator(parse_smiles("COc1ccccc1"), phenol), 0.0);         // ether
  EXPECT_EQ(cleavable_indicator(parse_smiles("CC(=O)c1ccccc1"), parse_smiles("c1ccccc1")), 0.0);  // ketone
}

TEST(Prodrug, InvalidInputs) {
  auto parent = parse_smiles("Oc1ccccc1");
  EXPECT_THROW(prodrug_terms(parse_smiles("CCO"), parent), std::invalid_argument);
  EXPECT_THROW(prodrug_terms(MolecularGraph{}, parent), std::invalid_argument);
}

TEST(BreakEven, Examples) {
  EXPECT_EQ(break_even(50000, 10000), 5);
  EXPECT_EQ(break_even(50000, 200), 250);
  EXPECT_EQ(break_even(1, 1), 1);
  EXPECT_EQ(break_even(50001, 10000), 6);
  EXPECT_THROW(break_even(50000, 0), std::invalid_argument);
}

TEST(RewardSpecTest, UnboundSlotIsConfigError) {
  RewardSpec spec;
  spec.bindings.erase("jnk3");
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = RewardSpec{};
  spec.bindings["sa"] = "nope";
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = RewardSpec{};
  spec.aggregator = RewardSpec::Aggregator::Weighted;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.weights["qed_proxy"] = 1.0;
  EXPECT_NO_THROW(spec.validate());
}

TEST(RewardSpecTest, AggregatorNames) {
  for (auto a : {RewardSpec::Aggregator::KinaseMpo, RewardSpec::Aggregator::Prodrug,
                 RewardSpec::Aggregator::Weighted})
    EXPECT_EQ(parse_aggregator(aggregator_name(a)), a);
  EXPECT_THROW(parse_aggregator("mean"), ConfigError);
}

TEST(RewardFunctionTest, MatchesAggregatorAndCountsCalls) {
  OracleMeter meter;
  RewardFunction f(RewardSpec{}, meter);
  auto g = parse_smiles("Clc1ccc(O)cc1");
  auto r = f(g, g, OraclePhase::Train);
  auto v = kinase_mpo({gsk3b_proxy(g), jnk3_proxy(g), qed_proxy(g), sa_proxy(g)});
  EXPECT_EQ(r.reward, v.reward);
  EXPECT_EQ(r.success, v.success);
  f(g, g, OraclePhase::Eval);
  f(g, g, OraclePhase::Eval);
  EXPECT_EQ(meter.count(OraclePhase::Train), 1);
  EXPECT_EQ(meter.count(OraclePhase::Eval), 2);
  EXPECT_EQ(meter.count(OraclePhase::Pretrain), 0);
  EXPECT_EQ(meter.total(), 3);
}

TEST(RewardFunctionTest, ProdrugUsesStart) {
  OracleMeter meter;
  RewardSpec spec;
  spec.aggregator = RewardSpec::Aggregator::Prodrug;
  RewardFunction f(spec, meter);
  auto parent = parse_smiles("Oc1ccccc1");
  EXPECT_EQ(f(parent, parent, OraclePhase::Train).reward, 2.0 * qed_proxy(parent));
}

TEST(OracleMeterTest, ConcurrentIncrements) {
  OracleMeter meter;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 10000; ++i) meter.record(OraclePhase::Train);
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(meter.count(OraclePhase::Train), 40000);
}
