#pragma once

// The graph-construction MDP. A composite action is taken in three
// sub-levels:
//   Level 0  Stop | AddAtom(token) | SelectExisting(u)
//   Level 1  target atom v (anchor for a new atom, or bond partner of u)
//   Level 2  bond order b in 1..6
// Level-0 action indices: 0 = Stop, 1 + token id = AddAtom, 24 + u = Select.
// Level-1 indices are atom indices; Level-2 index k means order k + 1.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "molbuild/chem.hpp"

namespace molbuild {

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr int kLevel0Fixed = 1 + kVocabSize;  // Stop + tokens
inline constexpr int kLevel2Size = kMaxBondOrder;

struct EnvConfig {
  int max_atoms = kDefaultMaxAtoms;
  // Stop stays masked until this many atoms were added to the start (unless
  // the graph can no longer grow).
  int min_added_atoms = 0;
  // Composite steps before a forced stop; 0 means 4 * max_atoms.
  int step_budget = 0;

  int budget() const { return step_budget > 0 ? step_budget : 4 * max_atoms; }
};

enum class Phase { Level0, Level1, Level2, Done };

struct EnvState {
  MolecularGraph graph;
  Phase phase = Phase::Level0;
  int level0_choice = -1;  // pending Level-0 index
  int level1_choice = -1;  // pending target atom
  int step_count = 0;
  int start_size = 0;
  bool forced_stop = false;

  bool done() const { return phase == Phase::Done; }
  int level() const { return static_cast<int>(phase); }
  bool pending_add() const { return level0_choice >= 1 && level0_choice < kLevel0Fixed; }
  // Atom chosen at Level 0 for SelectExisting, else -1.
  int selected_atom() const { return level0_choice >= kLevel0Fixed ? level0_choice - kLevel0Fixed : -1; }
  std::optional<AtomToken> pending_token() const {
    if (!pending_add()) return std::nullopt;
    return AtomToken::from_id(level0_choice - 1);
  }
};

struct ActionMask {
  int level = 0;
  std::vector<bool> legal;

  int legal_count() const;
  int first_legal() const;
};

EnvState seed_state(const MolecularGraph& start);
EnvState seed_state(AtomToken token);

ActionMask legal_mask(const EnvState& state, const EnvConfig& config = {});
EnvState apply(const EnvState& state, int action, const EnvConfig& config = {});

struct CompositeAction {
  enum class Kind { Stop, AddAtom, Bond };
  Kind kind = Kind::Stop;
  int token = -1;  // AddAtom
  int u = -1;      // Bond source
  int v = -1;      // anchor / bond target
  int order = 0;

  static CompositeAction stop() { return {}; }
  static CompositeAction add_atom(int token, int anchor, int order) {
    return {Kind::AddAtom, token, -1, anchor, order};
  }
  static CompositeAction bond(int u, int v, int order) { return {Kind::Bond, -1, u, v, order}; }

  // The per-level action indices this composite action expands to.
  std::vector<int> sub_actions() const;

  friend bool operator==(const CompositeAction&, const CompositeAction&) = default;
};

struct Trajectory {
  MolecularGraph start;
  std::vector<CompositeAction> actions;
  MolecularGraph final_graph;
  bool forced_stop = false;

  int length() const { return static_cast<int>(actions.size()); }
};

// Plays the actions from the start state; throws ContractError on any
// illegal sub-action.
MolecularGraph replay(const Trajectory& t, const EnvConfig& config = {});

// Canonical construction trajectory. Atoms are placed in the order of the
// rank-induced depth-first traversal (the canonical SMILES order), each
// anchored to its already-placed neighbour of lowest rank; remaining bonds
// are closed in (min rank, max rank) order; then Stop. When `placement` is
// given it receives placement[k] = input atom placed at index k, so the
// replayed graph equals input.permuted(placement).
Trajectory decompose(const MolecularGraph& g, std::vector<int>* placement = nullptr);

// Line format: start SMILES, then tab-separated tokens
//   A:<symbol>@<anchor>:<order>   B:<u>-<v>:<order>   STOP   (FORCED suffix)
// Atom indices refer to the start as re-parsed from its SMILES, followed by
// atoms in the order they were added.
std::string format_trajectory(const Trajectory& t);
Trajectory parse_trajectory(const std::string& line, const EnvConfig& config = {});

}  // namespace molbuild
