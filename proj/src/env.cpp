#include "molbuild/env.hpp"

#include <algorithm>
#include <sstream>

#include "molbuild/smiles.hpp"

namespace molbuild {

int ActionMask::legal_count() const {
  return static_cast<int>(std::count(legal.begin(), legal.end(), true));
}

int ActionMask::first_legal() const {
  auto it = std::find(legal.begin(), legal.end(), true);
  return it == legal.end() ? -1 : static_cast<int>(it - legal.begin());
}

EnvState seed_state(const MolecularGraph& start) {
  if (start.empty()) throw std::invalid_argument("start structure is empty");
  if (!start.is_connected()) throw std::invalid_argument("start structure is disconnected");
  if (!start.valence_valid()) throw std::invalid_argument("start structure violates valence");
  EnvState s;
  s.graph = start;
  s.start_size = start.atom_count();
  return s;
}

EnvState seed_state(AtomToken token) { return seed_state(MolecularGraph(token)); }

namespace {

bool complete_molecule(const MolecularGraph& g) {
  if (g.atom_count() == 1) return true;
  for (int a = 0; a < g.atom_count(); ++a)
    if (g.degree(a) == 0) return false;
  return true;
}

}  // namespace

ActionMask legal_mask(const EnvState& state, const EnvConfig& config) {
  if (state.done()) throw ContractError("legal_mask on a finished state");
  const auto& g = state.graph;
  const int n = g.atom_count();
  std::vector<int> rv(n);
  for (int a = 0; a < n; ++a) rv[a] = remaining_valence(g, a);
  ActionMask m;
  m.level = state.level();

  switch (state.phase) {
    case Phase::Level0: {
      m.legal.assign(kLevel0Fixed + n, false);
      bool any_free = std::any_of(rv.begin(), rv.end(), [](int r) { return r >= 1; });
      bool can_add = n < config.max_atoms && any_free;
      bool can_select = false;
      for (int u = 0; u < n; ++u) {
        if (rv[u] < 1) continue;
        for (int v = 0; v < n; ++v) {
          if (v != u && rv[v] >= 1 && !g.bonded(u, v)) {
            m.legal[kLevel0Fixed + u] = true;
            can_select = true;
            break;
          }
        }
      }
      for (int t = 0; t < kVocabSize; ++t) m.legal[1 + t] = can_add;
      int added = n - state.start_size;
      bool grown_enough = added >= config.min_added_atoms || (!can_add && !can_select);
      m.legal[0] = complete_molecule(g) && grown_enough;
      break;
    }
    case Phase::Level1: {
      m.legal.assign(n, false);
      int u = state.selected_atom();
      for (int v = 0; v < n; ++v) {
        if (rv[v] < 1) continue;
        if (u >= 0 && (v == u || g.bonded(u, v))) continue;
        m.legal[v] = true;
      }
      break;
    }
    case Phase::Level2: {
      m.legal.assign(kLevel2Size, false);
      int v = state.level1_choice;
      int cap = rv[v];
      if (state.pending_add()) cap = std::min(cap, state.pending_token()->max_valence());
      else cap = std::min(cap, rv[state.selected_atom()]);
      for (int b = 1; b <= kLevel2Size; ++b) m.legal[b - 1] = b <= cap;
      break;
    }
    case Phase::Done: break;
  }
  return m;
}

EnvState apply(const EnvState& state, int action, const EnvConfig& config) {
  auto mask = legal_mask(state, config);
  if (action < 0 || action >= static_cast<int>(mask.legal.size()) || !mask.legal[action])
    throw ContractError("illegal action " + std::to_string(action) + " at level " +
                        std::to_string(mask.level));
  EnvState next = state;
  switch (state.phase) {
    case Phase::Level0:
      if (action == 0) {
        next.phase = Phase::Done;
      } else {
        next.level0_choice = action;
        next.phase = Phase::Level1;
      }
      break;
    case Phase::Level1:
      next.level1_choice = action;
      next.phase = Phase::Level2;
      break;
    case Phase::Level2: {
      int order = action + 1;
      if (state.pending_add())
        next.graph = state.graph.add_atom_with_bond(*state.pending_token(), state.level1_choice, order,
                                                    config.max_atoms);
      else
        next.graph = state.graph.add_bond(state.selected_atom(), state.level1_choice, order);
      next.level0_choice = next.level1_choice = -1;
      next.step_count = state.step_count + 1;
      next.phase = Phase::Level0;
      if (next.step_count >= config.budget()) {
        next.phase = Phase::Done;
        next.forced_stop = true;
      }
      break;
    }
    case Phase::Done: break;
  }
  return next;
}

std::vector<int> CompositeAction::sub_actions() const {
  switch (kind) {
    case Kind::Stop: return {0};
    case Kind::AddAtom: return {1 + token, v, order - 1};
    case Kind::Bond: return {kLevel0Fixed + u, v, order - 1};
  }
  return {};
}

MolecularGraph replay(const Trajectory& t, const EnvConfig& config) {
  EnvState s = seed_state(t.start);
  for (const auto& a : t.actions) {
    if (s.done()) throw ContractError("action after episode end");
    for (int sub : a.sub_actions()) s = apply(s, sub, config);
  }
  return s.graph;
}

Trajectory decompose(const MolecularGraph& g, std::vector<int>* placement) {
  if (g.empty()) throw std::invalid_argument("cannot decompose an empty graph");
  if (!g.is_connected()) throw std::invalid_argument("cannot decompose a disconnected graph");
  auto rank = canonical_rank(g);
  auto order = write_smiles_with_order(g).order;
  const int n = g.atom_count();
  std::vector<int> pos(n, -1);
  pos[order[0]] = 0;

  Trajectory t;
  t.start = MolecularGraph(g.atom(order[0]));
  std::vector<std::vector<bool>> tree(n, std::vector<bool>(n, false));
  for (int k = 1; k < n; ++k) {
    int a = order[k];
    int anchor = -1;
    for (const auto& [w, o] : g.neighbors(a))
      if (pos[w] >= 0 && (anchor < 0 || rank[w] < rank[anchor])) anchor = w;
    pos[a] = k;
    tree[a][anchor] = tree[anchor][a] = true;
    t.actions.push_back(CompositeAction::add_atom(g.atom(a).id(), pos[anchor], g.bond_order(a, anchor)));
  }
  std::vector<std::pair<std::pair<int, int>, Bond>> closures;
  for (const auto& b : g.bonds()) {
    if (tree[b.u][b.v]) continue;
    auto key = std::minmax(rank[b.u], rank[b.v]);
    closures.push_back({{key.first, key.second}, b});
  }
  std::sort(closures.begin(), closures.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  for (const auto& [key, b] : closures) {
    int u = rank[b.u] < rank[b.v] ? b.u : b.v;
    int v = u == b.u ? b.v : b.u;
    t.actions.push_back(CompositeAction::bond(pos[u], pos[v], b.order));
  }
  t.actions.push_back(CompositeAction::stop());
  if (placement) *placement = order;
  t.final_graph = g.permuted(order);
  return t;
}

// ---------------------------------------------------------------------------

std::string format_trajectory(const Trajectory& t) {
  auto written = write_smiles_with_order(t.start);
  const int n0 = t.start.atom_count();
  std::vector<int> remap(n0);
  for (int k = 0; k < n0; ++k) remap[written.order[k]] = k;
  auto idx = [&](int i) { return i < n0 ? remap[i] : i; };

  std::ostringstream out;
  out << written.text;
  for (const auto& a : t.actions) {
    out << '\t';
    switch (a.kind) {
      case CompositeAction::Kind::Stop: out << "STOP"; break;
      case CompositeAction::Kind::AddAtom:
        out << "A:" << AtomToken::from_id(a.token).symbol() << '@' << idx(a.v) << ':' << a.order;
        break;
      case CompositeAction::Kind::Bond:
        out << "B:" << idx(a.u) << '-' << idx(a.v) << ':' << a.order;
        break;
    }
  }
  if (t.forced_stop) out << "\tFORCED";
  return out.str();
}

namespace {

int token_from_symbol(const std::string& sym) {
  for (int id = 0; id < kVocabSize; ++id)
    if (AtomToken::from_id(id).symbol() == sym) return id;
  throw std::invalid_argument("unknown atom token: " + sym);
}

}  // namespace

Trajectory parse_trajectory(const std::string& line, const EnvConfig& config) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, '\t');) fields.push_back(f);
  if (fields.empty()) throw std::invalid_argument("empty trajectory line");
  Trajectory t;
  t.start = parse_smiles(fields[0]);
  for (std::size_t k = 1; k < fields.size(); ++k) {
    const auto& f = fields[k];
    if (f == "STOP") {
      t.actions.push_back(CompositeAction::stop());
    } else if (f == "FORCED") {
      t.forced_stop = true;
    } else if (f.rfind("A:", 0) == 0) {
      auto at = f.rfind('@');
      auto colon = f.rfind(':');
      if (at == std::string::npos || colon == std::string::npos || colon < at || at < 3)
        throw std::invalid_argument("malformed add-atom token: " + f);
      int token = token_from_symbol(f.substr(2, at - 2));
      t.actions.push_back(CompositeAction::add_atom(token, std::stoi(f.substr(at + 1, colon - at - 1)),
                                                    std::stoi(f.substr(colon + 1))));
    } else if (f.rfind("B:", 0) == 0) {
      auto dash = f.find('-', 2);
      auto colon = f.rfind(':');
      if (dash == std::string::npos || colon == std::string::npos || colon < dash)
        throw std::invalid_argument("malformed bond token: " + f);
      t.actions.push_back(CompositeAction::bond(std::stoi(f.substr(2, dash - 2)),
                                                std::stoi(f.substr(dash + 1, colon - dash - 1)),
                                                std::stoi(f.substr(colon + 1))));
    } else {
      throw std::invalid_argument("unknown trajectory token: " + f);
    }
  }
  t.final_graph = replay(t, config);
  return t;
}

}  // namespace molbuild
