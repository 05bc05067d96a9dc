#include "molbuild/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "molbuild/fingerprint.hpp"
#include "molbuild/smiles.hpp"

namespace molbuild {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_valid(const MolecularGraph& g, const char* what) {
  if (g.empty() || !g.is_connected() || !g.valence_valid())
    throw std::invalid_argument(std::string(what) + " is not a valid molecule");
}

bool is_halogen(Element e) { return e == Element::F || e == Element::Cl || e == Element::Br || e == Element::I; }

int ring_nitrogens(const MolecularGraph& g) {
  auto ring = ring_atoms(g);
  int n = 0;
  for (int a = 0; a < g.atom_count(); ++a) n += ring[a] && g.atom(a).element() == Element::N;
  return n;
}

bool carbonyl_carbon(const MolecularGraph& g, int a) {
  if (g.atom(a).element() != Element::C) return false;
  for (auto [b, order] : g.neighbors(a))
    if (order == 2 && g.atom(b).element() == Element::O) return true;
  return false;
}

bool oxo_centre(const MolecularGraph& g, int a) {
  Element e = g.atom(a).element();
  if (e != Element::S && e != Element::P) return false;
  for (auto [b, order] : g.neighbors(a))
    if (order == 2 && g.atom(b).element() == Element::O) return true;
  return false;
}

int carbonyls(const MolecularGraph& g) {
  int n = 0;
  for (int a = 0; a < g.atom_count(); ++a) {
    if (g.atom(a).element() != Element::O || g.degree(a) != 1) continue;
    auto [nb, order] = g.neighbors(a).front();
    n += g.atom(nb).element() == Element::C && order == 2;
  }
  return n;
}

// Per-token counts; summing over these keeps float results independent of atom order.
std::array<int, kVocabSize> token_counts(const MolecularGraph& g) {
  std::array<int, kVocabSize> n{};
  for (const auto& t : g.atoms()) ++n[t.id()];
  return n;
}

double size_penalty(const MolecularGraph& g) { return 0.1 * std::max(0, g.atom_count() - 30); }

bool is_hetero(Element e) {
  return e == Element::N || e == Element::O || e == Element::P || e == Element::S || is_halogen(e);
}

// Shortest path from u to v that does not use the direct u-v bond; -1 if none.
int detour_length(const MolecularGraph& g, int u, int v) {
  std::vector<int> dist(g.atom_count(), -1);
  std::vector<int> queue{u};
  dist[u] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    int a = queue[head];
    for (auto [b, order] : g.neighbors(a)) {
      (void)order;
      if (dist[b] >= 0 || (a == u && b == v)) continue;
      dist[b] = dist[a] + 1;
      if (b == v) return dist[b];
      queue.push_back(b);
    }
  }
  return -1;
}

bool has_double_bond(const MolecularGraph& g, int a) {
  for (auto [b, order] : g.neighbors(a))
    if (order == 2) return true;
  return false;
}

// Halogens on ring carbons that carry a double bond.
int aryl_halides(const MolecularGraph& g) {
  auto ring = ring_atoms(g);
  int n = 0;
  for (int a = 0; a < g.atom_count(); ++a) {
    if (!is_halogen(g.atom(a).element())) continue;
    for (auto [b, order] : g.neighbors(a))
      n += order == 1 && ring[b] && g.atom(b).element() == Element::C && has_double_bond(g, b);
  }
  return n;
}

// Carbonyl carbons bonded to a nitrogen.
int amides(const MolecularGraph& g) {
  int n = 0;
  for (int c = 0; c < g.atom_count(); ++c) {
    if (g.atom(c).element() != Element::C) continue;
    bool oxo = false, nitrogen = false;
    for (auto [b, order] : g.neighbors(c)) {
      Element e = g.atom(b).element();
      oxo = oxo || (e == Element::O && order == 2);
      nitrogen = nitrogen || (e == Element::N && order == 1);
    }
    n += oxo && nitrogen;
  }
  return n;
}

LogpTable bundled_table() {
  // Order follows the token ids.
  return {0.20,  -0.50, -0.50, 0.20,  0.20,               // C C+ C- C@ C@@
          -0.70, -1.50, -1.00,                             // N N+ N-
          -0.40, -1.20, -1.30,                             // O O+ O-
          0.30,  -0.50, -0.50,                             // P P+ P-
          0.60,  -0.30, -0.40, 0.60,  0.60,                // S S+ S- S@ S@@
          0.40,  0.70,  0.90,  1.10};                      // F Cl Br I
}

SubstructurePattern make_pattern(std::vector<Element> elements, const std::vector<Bond>& bonds,
                                 std::vector<bool> wildcard) {
  std::vector<AtomToken> atoms;
  for (Element e : elements) atoms.push_back(*AtomToken::make(e));
  return SubstructurePattern(MolecularGraph::from_parts(std::move(atoms), bonds), std::move(wildcard));
}

std::size_t distinct_matches(const MolecularGraph& g, const SubstructurePattern& p) {
  std::set<std::vector<int>> seen;
  for (auto m : find_substructure_matches(g, p)) {
    std::sort(m.begin(), m.end());
    seen.insert(std::move(m));
  }
  return seen.size();
}

}  // namespace

double mol_weight(const MolecularGraph& g) {
  auto n = token_counts(g);
  double w = 0.0;
  for (int t = 0; t < kVocabSize; ++t)
    if (n[t]) w += n[t] * atomic_mass(AtomToken::from_id(t).element());
  return w;
}

int hbd_count(const MolecularGraph& g) {
  int n = 0;
  for (int a = 0; a < g.atom_count(); ++a) {
    Element e = g.atom(a).element();
    if ((e == Element::N || e == Element::O) && remaining_valence(g, a) >= 1) ++n;
  }
  return n;
}

int ring_count(const MolecularGraph& g) { return cycle_rank(g); }

int rotatable_bonds(const MolecularGraph& g) {
  int n = 0;
  for (const auto& b : g.bonds())
    if (b.order == 1 && g.degree(b.u) > 1 && g.degree(b.v) > 1 && detour_length(g, b.u, b.v) < 0) ++n;
  return n;
}

bool has_macrocycle(const MolecularGraph& g) {
  for (const auto& b : g.bonds())
    if (detour_length(g, b.u, b.v) + 1 > 8) return true;
  return false;
}

int alert_count(const MolecularGraph& g) {
  int n = 0;
  for (const auto& b : g.bonds()) {
    Element eu = g.atom(b.u).element(), ev = g.atom(b.v).element();
    // bonds at a sulfonyl or phosphoryl centre are ordinary
    bool hetero_pair = is_hetero(eu) && is_hetero(ev) && !oxo_centre(g, b.u) && !oxo_centre(g, b.v);
    bool acyclic = detour_length(g, b.u, b.v) < 0;
    bool saturated = !has_double_bond(g, b.u) && !has_double_bond(g, b.v);
    if (hetero_pair && (acyclic || saturated || (eu == Element::S && ev == Element::S))) ++n;
    else if ((is_halogen(eu) && ev != Element::C) || (is_halogen(ev) && eu != Element::C)) ++n;
    else if (carbonyl_carbon(g, b.u) && carbonyl_carbon(g, b.v)) ++n;
  }
  for (int a = 0; a < g.atom_count(); ++a) {
    int heavy_halogens = 0, hetero = 0;
    for (auto [b, order] : g.neighbors(a)) {
      Element e = g.atom(b).element();
      heavy_halogens += is_halogen(e) && e != Element::F;
      hetero += order == 1 && is_hetero(e) && e != Element::F;
    }
    const Element e = g.atom(a).element();
    bool oxygen = false, odd_double = false;
    for (auto [b, order] : g.neighbors(a)) {
      oxygen = oxygen || g.atom(b).element() == Element::O;
      odd_double = odd_double || (order == 2 && g.atom(b).element() != Element::O);
    }
    if (e == Element::P && !oxygen) ++n;
    // thiocarbonyls, S ylides, hypervalent S without oxygen
    if (e == Element::S && (odd_double || (g.used_valence(a) > 2 && !oxygen))) ++n;
    if (heavy_halogens >= 2) ++n;
    else if (g.atom(a).element() == Element::C && !has_double_bond(g, a) && hetero >= 2) ++n;
  }
  return n;
}

const LogpTable& default_logp_table() {
  static const LogpTable table = bundled_table();
  return table;
}

LogpTable load_logp_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open logp table " + path.string());
  LogpTable table{};
  std::vector<bool> seen(kVocabSize, false);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string symbol;
    double value = 0.0;
    if (!(fields >> symbol)) continue;
    if (!(fields >> value))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": missing contribution");
    int id = -1;
    for (int t = 0; t < kVocabSize; ++t)
      if (AtomToken::from_id(t).symbol() == symbol) id = t;
    if (id < 0) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown token " + symbol);
    if (seen[id]) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": duplicate token " + symbol);
    seen[id] = true;
    table[id] = value;
  }
  for (int t = 0; t < kVocabSize; ++t)
    if (!seen[t]) throw ConfigError(path.string() + ": no entry for " + AtomToken::from_id(t).symbol());
  return table;
}

double logp_proxy(const MolecularGraph& g, const LogpTable& table) {
  auto n = token_counts(g);
  double s = 0.0;
  for (int t = 0; t < kVocabSize; ++t) s += n[t] * table[t];
  return s;
}

double sa_proxy(const MolecularGraph& g) {
  int charged = 0, chiral = 0;
  for (const auto& t : g.atoms()) {
    charged += t.charge() != 0;
    chiral += t.chirality() != Chirality::None;
  }
  // atoms on three or more ring bonds: fusion, bridge and spiro centres
  int junctions = 0;
  for (int a = 0; a < g.atom_count(); ++a) {
    int ring_bonds = 0;
    for (auto [b, order] : g.neighbors(a)) {
      (void)order;
      ring_bonds += detour_length(g, a, b) >= 0;
    }
    junctions += ring_bonds >= 3;
  }
  double x = 0.04 * g.atom_count() + 0.3 * cycle_rank(g) + 0.5 * charged + 0.25 * chiral + 0.5 * alert_count(g) +
             0.25 * junctions + (has_macrocycle(g) ? 1.5 : 0.0);
  return 1.0 + 9.0 * x / (x + 4.0);
}

double qed_proxy(const MolecularGraph& g, const LogpTable& table) {
  double mw = mol_weight(g);
  double lp = logp_proxy(g, table);
  int donors = hbd_count(g);
  int rings = cycle_rank(g);
  int rot = rotatable_bonds(g);
  double d_mw = std::exp(-std::pow((mw - 350.0) / 150.0, 2));
  double d_logp = std::exp(-std::pow((lp - 2.5) / 2.0, 2));
  double d_hbd = donors <= 3 ? 1.0 : std::exp(-0.5 * (donors - 3));
  double d_rings = rings == 0 ? 0.5 : rings <= 3 ? 1.0 : std::exp(-0.7 * (rings - 3));
  double d_rot = rot <= 6 ? 1.0 : std::exp(-0.3 * (rot - 6));
  double d_alerts = std::exp(-0.7 * alert_count(g));
  return (d_mw + d_logp + d_hbd + d_rings + d_rot + d_alerts) / 6.0;
}

// Hinge-binder flavour: ring nitrogens, donors and an amide.
double gsk3b_proxy(const MolecularGraph& g) {
  return sigmoid(-3.5 + 0.9 * std::min(ring_nitrogens(g), 2) + 0.9 * std::min(hbd_count(g), 2) +
                 1.5 * std::min(amides(g), 1) + 0.3 * std::min(cycle_rank(g), 3) - alert_count(g) -
                 size_penalty(g));
}

// Aryl halides and a carbonyl on a ring system.
double jnk3_proxy(const MolecularGraph& g) {
  return sigmoid(-3.5 + 1.2 * std::min(aryl_halides(g), 2) + 0.6 * std::min(ring_nitrogens(g), 2) +
                 1.2 * std::min(carbonyls(g), 1) + 0.3 * std::min(cycle_rank(g), 3) - alert_count(g) -
                 size_penalty(g));
}

const std::vector<RewardComponent>& component_library() {
  static const std::vector<RewardComponent> lib = {
      {"mol_weight", 0.0, 1e9, [](const MolecularGraph& g) { return mol_weight(g); }},
      {"logp_proxy", -1e9, 1e9, [](const MolecularGraph& g) { return logp_proxy(g); }},
      {"hbd_count", 0.0, 1e9, [](const MolecularGraph& g) { return static_cast<double>(hbd_count(g)); }},
      {"ring_count", 0.0, 1e9, [](const MolecularGraph& g) { return static_cast<double>(ring_count(g)); }},
      {"rotatable_bonds", 0.0, 1e9, [](const MolecularGraph& g) { return static_cast<double>(rotatable_bonds(g)); }},
      {"alert_count", 0.0, 1e9, [](const MolecularGraph& g) { return static_cast<double>(alert_count(g)); }},
      {"sa_proxy", 1.0, 10.0, [](const MolecularGraph& g) { return sa_proxy(g); }},
      {"qed_proxy", 0.0, 1.0, [](const MolecularGraph& g) { return qed_proxy(g); }},
      {"gsk3b_proxy", 0.0, 1.0, [](const MolecularGraph& g) { return gsk3b_proxy(g); }},
      {"jnk3_proxy", 0.0, 1.0, [](const MolecularGraph& g) { return jnk3_proxy(g); }},
  };
  return lib;
}

const RewardComponent& find_component(const std::string& name) {
  for (const auto& c : component_library())
    if (c.name == name) return c;
  throw ConfigError("unknown reward component: " + name);
}

double sa_prime(double sa) { return (10.0 - sa) / 9.0; }

ObjectiveValue kinase_mpo(const KinaseComponents& c, const KinaseThresholds& t) {
  ObjectiveValue out;
  out.reward = (c.gsk3b + c.jnk3 + c.qed + sa_prime(c.sa)) / 4.0;
  out.success = c.gsk3b >= t.gsk3b && c.jnk3 >= t.jnk3 && c.qed >= t.qed && c.sa <= t.sa;
  return out;
}

double ProdrugTerms::total() const {
  return delta_logp + delta_hbd + cleave + 2.0 * qed - (mw > 600.0 ? 5.0 : 0.0);
}

const std::vector<SubstructurePattern>& cleavable_patterns() {
  using E = Element;
  static const std::vector<SubstructurePattern> patterns = {
      // ester C(=O)OC
      make_pattern({E::C, E::O, E::O, E::C}, {{0, 1, 2}, {0, 2, 1}, {2, 3, 1}}, {false, false, true}),
      // carbonate OC(=O)O
      make_pattern({E::O, E::C, E::O, E::O}, {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}}, {true, false, true}),
      // carbamate NC(=O)O
      make_pattern({E::N, E::C, E::O, E::O}, {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}}, {true, false, true}),
      // amide C(=O)N
      make_pattern({E::C, E::O, E::N}, {{0, 1, 2}, {0, 2, 1}}, {false, true}),
  };
  return patterns;
}

double cleavable_indicator(const MolecularGraph& candidate, const MolecularGraph& parent, bool require_new) {
  for (const auto& p : cleavable_patterns()) {
    std::size_t in_candidate = distinct_matches(candidate, p);
    if (in_candidate == 0) continue;
    if (!require_new || in_candidate > distinct_matches(parent, p)) return 1.0;
  }
  return 0.0;
}

ProdrugTerms prodrug_terms(const MolecularGraph& candidate, const MolecularGraph& parent, bool require_new,
                           const LogpTable& table) {
  require_valid(candidate, "candidate");
  require_valid(parent, "parent");
  if (!contains_subgraph(candidate, murcko_scaffold(parent)))
    throw std::invalid_argument("candidate does not contain the parent scaffold");
  ProdrugTerms t;
  t.delta_logp = logp_proxy(candidate, table) - logp_proxy(parent, table);
  t.delta_hbd = hbd_count(parent) - hbd_count(candidate);
  t.cleave = cleavable_indicator(candidate, parent, require_new);
  t.qed = qed_proxy(candidate, table);
  t.mw = mol_weight(candidate);
  return t;
}

std::int64_t break_even(std::int64_t train_budget, std::int64_t per_instance_cost) {
  if (per_instance_cost <= 0) throw std::invalid_argument("per-instance cost must be positive");
  if (train_budget < 0) throw std::invalid_argument("training budget must be non-negative");
  return (train_budget + per_instance_cost - 1) / per_instance_cost;
}

void RewardSpec::validate() const {
  switch (aggregator) {
    case Aggregator::KinaseMpo:
      for (const char* slot : {"gsk3b", "jnk3", "qed", "sa"}) {
        auto it = bindings.find(slot);
        if (it == bindings.end()) throw ConfigError(std::string("unbound kinase component: ") + slot);
        find_component(it->second);
      }
      for (const auto& [slot, name] : bindings) {
        if (slot != "gsk3b" && slot != "jnk3" && slot != "qed" && slot != "sa")
          throw ConfigError("unknown kinase slot: " + slot);
      }
      break;
    case Aggregator::Prodrug: break;
    case Aggregator::Weighted:
      if (weights.empty()) throw ConfigError("weighted aggregator needs at least one component weight");
      for (const auto& [name, w] : weights) {
        find_component(name);
        if (!std::isfinite(w)) throw ConfigError("non-finite weight for " + name);
      }
      break;
  }
}

RewardFunction::RewardFunction(RewardSpec spec, OracleMeter& meter)
    : spec_(std::move(spec)), table_(default_logp_table()), meter_(&meter) {
  spec_.validate();
  if (!spec_.logp_table.empty()) table_ = load_logp_table(spec_.logp_table);
}

RewardResult RewardFunction::operator()(const MolecularGraph& candidate, const MolecularGraph& start,
                                        OraclePhase phase) const {
  RewardResult out;
  auto component = [&](const std::string& name) {
    if (name == "logp_proxy") return logp_proxy(candidate, table_);
    if (name == "qed_proxy") return qed_proxy(candidate, table_);
    return find_component(name).compute(candidate);
  };
  switch (spec_.aggregator) {
    case RewardSpec::Aggregator::KinaseMpo: {
      require_valid(candidate, "candidate");
      KinaseComponents c{component(spec_.bindings.at("gsk3b")), component(spec_.bindings.at("jnk3")),
                         component(spec_.bindings.at("qed")), component(spec_.bindings.at("sa"))};
      auto v = kinase_mpo(c, spec_.thresholds);
      out = {v.reward, v.success};
      break;
    }
    case RewardSpec::Aggregator::Prodrug:
      out.reward = prodrug_terms(candidate, start, spec_.cleave_requires_new, table_).total();
      break;
    case RewardSpec::Aggregator::Weighted:
      require_valid(candidate, "candidate");
      for (const auto& [name, w] : spec_.weights) out.reward += w * component(name);
      break;
  }
  meter_->record(phase);
  return out;
}

std::string aggregator_name(RewardSpec::Aggregator a) {
  switch (a) {
    case RewardSpec::Aggregator::KinaseMpo: return "kinase-mpo";
    case RewardSpec::Aggregator::Prodrug: return "prodrug";
    case RewardSpec::Aggregator::Weighted: return "weighted";
  }
  return "?";
}

RewardSpec::Aggregator parse_aggregator(const std::string& name) {
  for (auto a : {RewardSpec::Aggregator::KinaseMpo, RewardSpec::Aggregator::Prodrug, RewardSpec::Aggregator::Weighted})
    if (aggregator_name(a) == name) return a;
  throw ConfigError("unknown reward aggregator: " + name);
}

}  // namespace molbuild
