#pragma once

// Reward oracles: proxy property components, the four-way kinase objective,
// the prodrug reward and oracle-call accounting.
//
// The activity, QED and SA components are desk-scale proxies built from
// simple graph counts. They are deterministic and permutation invariant; no
// claim is made that they track the real assays or toolkit scores.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "molbuild/chem.hpp"

namespace molbuild {

// Sum of heavy-atom masses (hydrogens are implicit and not counted).
double mol_weight(const MolecularGraph& g);
// N and O atoms with free valence.
int hbd_count(const MolecularGraph& g);
int ring_count(const MolecularGraph& g);
// Acyclic single bonds between two non-terminal atoms.
int rotatable_bonds(const MolecularGraph& g);
// Some ring bond whose smallest ring has more than 8 atoms.
bool has_macrocycle(const MolecularGraph& g);
// Crude structural alerts: a bond between two of N/O/P/S/halogen that is
// acyclic, saturated or S-S, unless one end is an S or P carrying =O; a
// halogen on anything but carbon; two Cl/Br/I on one atom; a saturated carbon
// single-bonded to two of N/O/P/S/Cl/Br/I; phosphorus without an oxygen
// neighbour; sulfur double-bonded to anything but oxygen, or above valence 2
// with no oxygen neighbour; two bonded carbonyl carbons.
int alert_count(const MolecularGraph& g);

using LogpTable = std::array<double, kVocabSize>;
// Bundled per-token contributions (also shipped as data/logp_contributions.tsv).
const LogpTable& default_logp_table();
// Two columns per line: token symbol, contribution. '#' comments allowed;
// every token must appear exactly once.
LogpTable load_logp_table(const std::filesystem::path& path);

double logp_proxy(const MolecularGraph& g, const LogpTable& table = default_logp_table());
// In [1, 10]: 1 + 9 x / (x + 4) with x = 0.04 atoms + 0.3 rings
// + 0.5 charged + 0.25 chiral + 0.5 alerts + 0.25 ring junction atoms
// + 1.5 if there is a macrocycle.
double sa_proxy(const MolecularGraph& g);
// In [0, 1]: mean of desirabilities of weight, logp, donors, rings,
// rotatable bonds and alerts.
double qed_proxy(const MolecularGraph& g, const LogpTable& table = default_logp_table());
// In (0, 1): logistic scores over ring nitrogens, donors, amides, aryl
// halides, carbonyls and ring counts, minus alerts.
double gsk3b_proxy(const MolecularGraph& g);
double jnk3_proxy(const MolecularGraph& g);

struct RewardComponent {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  std::function<double(const MolecularGraph&)> compute;
};

// mol_weight, logp_proxy, hbd_count, ring_count, rotatable_bonds,
// alert_count, sa_proxy, qed_proxy, gsk3b_proxy, jnk3_proxy.
const std::vector<RewardComponent>& component_library();
const RewardComponent& find_component(const std::string& name);

// ---- kinase objective -------------------------------------------------------

double sa_prime(double sa);  // (10 - sa) / 9

struct KinaseThresholds {
  double gsk3b = 0.5;
  double jnk3 = 0.5;
  double qed = 0.6;
  double sa = 4.0;
};

struct KinaseComponents {
  double gsk3b = 0.0;
  double jnk3 = 0.0;
  double qed = 0.0;
  double sa = 10.0;
};

struct ObjectiveValue {
  double reward = 0.0;
  bool success = false;
};

// Mean of gsk3b, jnk3, qed and sa_prime(sa); success when all thresholds hold
// (inclusive).
ObjectiveValue kinase_mpo(const KinaseComponents& c, const KinaseThresholds& t = {});

// ---- prodrug ----------------------------------------------------------------

struct ProdrugTerms {
  double delta_logp = 0.0;  // candidate - parent
  double delta_hbd = 0.0;   // parent - candidate
  double cleave = 0.0;      // 0 or 1
  double qed = 0.0;         // of the candidate
  double mw = 0.0;          // of the candidate

  // delta_logp + delta_hbd + cleave + 2 qed - 5 [mw > 600]
  double total() const;
};

// Ester, carbonate, carbamate and amide linkages. The C=O bond is exact; the
// bonds to the substituents match any order.
const std::vector<SubstructurePattern>& cleavable_patterns();

// 1 when some pattern has more distinct matches in the candidate than in the
// parent (or, with require_new = false, when any pattern matches at all).
double cleavable_indicator(const MolecularGraph& candidate, const MolecularGraph& parent, bool require_new = true);

ProdrugTerms prodrug_terms(const MolecularGraph& candidate, const MolecularGraph& parent, bool require_new = true,
                           const LogpTable& table = default_logp_table());

// ceil(train_budget / per_instance_cost).
std::int64_t break_even(std::int64_t train_budget, std::int64_t per_instance_cost);

// ---- configuration and accounting ------------------------------------------

enum class OraclePhase { Pretrain, Train, Eval };

class OracleMeter {
 public:
  void record(OraclePhase phase, std::int64_t n = 1) { counts_[static_cast<int>(phase)] += n; }
  std::int64_t count(OraclePhase phase) const { return counts_[static_cast<int>(phase)].load(); }
  std::int64_t total() const { return count(OraclePhase::Pretrain) + count(OraclePhase::Train) + count(OraclePhase::Eval); }

 private:
  std::array<std::atomic<std::int64_t>, 3> counts_{};
};

struct RewardSpec {
  enum class Aggregator { KinaseMpo, Prodrug, Weighted };
  Aggregator aggregator = Aggregator::KinaseMpo;
  // Kinase slots gsk3b / jnk3 / qed / sa mapped to component names.
  std::map<std::string, std::string> bindings{
      {"gsk3b", "gsk3b_proxy"}, {"jnk3", "jnk3_proxy"}, {"qed", "qed_proxy"}, {"sa", "sa_proxy"}};
  KinaseThresholds thresholds;
  // Weighted aggregator: component name -> weight.
  std::map<std::string, double> weights;
  bool cleave_requires_new = true;
  std::filesystem::path logp_table;  // empty: bundled table

  // Throws ConfigError (from fingerprint.hpp) on unbound or unknown names.
  void validate() const;
};

struct RewardResult {
  double reward = 0.0;
  bool success = false;
};

// A bound reward oracle. Each call counts one oracle evaluation.
class RewardFunction {
 public:
  RewardFunction(RewardSpec spec, OracleMeter& meter);

  RewardResult operator()(const MolecularGraph& candidate, const MolecularGraph& start, OraclePhase phase) const;
  const RewardSpec& spec() const { return spec_; }
  OracleMeter& meter() const { return *meter_; }

 private:
  RewardSpec spec_;
  LogpTable table_;
  OracleMeter* meter_;
};

std::string aggregator_name(RewardSpec::Aggregator a);
RewardSpec::Aggregator parse_aggregator(const std::string& name);

}  // namespace molbuild
