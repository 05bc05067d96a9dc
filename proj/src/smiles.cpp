#include "molbuild/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>

namespace molbuild {

namespace {

struct RawAtom {
  Element element = Element::C;
  int charge = 0;
  Chirality chirality = Chirality::None;
  bool aromatic = false;
  bool bracket = false;
  bool wildcard = false;
  int hydrogens = 0;  // explicit count inside brackets
  std::size_t offset = 0;
};

struct RawBond {
  int a = 0, b = 0;
  int order = 1;
  bool aromatic = false;
  std::size_t offset = 0;
};

struct RingOpen {
  int atom;
  int order;  // 0 = unspecified
  std::size_t offset;
};

// Smallest standard valence used to decide which aromatic atoms take a
// double bond during kekulization.
int kekule_valence(Element e, int charge) {
  switch (e) {
    case Element::C: return charge == 0 ? 4 : 3;
    case Element::N: return charge == 0 ? 3 : (charge > 0 ? 4 : 2);
    case Element::O: return charge == 0 ? 2 : (charge > 0 ? 3 : 1);
    case Element::P: return charge == 0 ? 3 : (charge > 0 ? 4 : 2);
    case Element::S: return charge == 0 ? 2 : (charge > 0 ? 3 : 1);
    default: return 1;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  ParsedSmiles run() {
    if (s_.empty()) throw SmilesError("empty SMILES", 0);
    parse_chain();
    if (!branches_.empty()) throw SmilesError("unclosed branch", branches_.back().second);
    if (!rings_.empty()) throw SmilesError("unmatched ring closure", rings_.begin()->second.offset);
    if (pending_order_ != 0) throw SmilesError("dangling bond", pending_offset_);
    return finish();
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  void parse_chain() {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == '(') {
        if (prev_ < 0) throw SmilesError("branch without preceding atom", pos_);
        if (pending_order_ != 0) throw SmilesError("bond before branch", pos_);
        branches_.emplace_back(prev_, pos_);
        ++pos_;
      } else if (c == ')') {
        if (branches_.empty()) throw SmilesError("unmatched ')'", pos_);
        if (pending_order_ != 0) throw SmilesError("dangling bond", pending_offset_);
        prev_ = branches_.back().first;
        branches_.pop_back();
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == '$' || c == '{') {
        if (pending_order_ != 0) throw SmilesError("consecutive bond symbols", pos_);
        if (prev_ < 0) throw SmilesError("bond without preceding atom", pos_);
        pending_offset_ = pos_;
        pending_order_ = parse_bond_symbol();
      } else if (c >= '0' && c <= '9') {
        ring_closure(c - '0', pos_);
        ++pos_;
      } else if (c == '%') {
        std::size_t at = pos_;
        if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2])))
          throw SmilesError("malformed %nn ring closure", at);
        ring_closure((s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0'), at);
        pos_ += 3;
      } else if (c == '.') {
        throw SmilesError("multi-fragment SMILES not supported", pos_);
      } else {
        int atom = parse_atom();
        if (prev_ >= 0) add_bond(prev_, atom, pending_order_, pending_order_ ? pending_offset_ : atoms_[atom].offset);
        else if (pending_order_ != 0) throw SmilesError("bond without preceding atom", pending_offset_);
        pending_order_ = 0;
        prev_ = atom;
      }
    }
  }

  int parse_bond_symbol() {
    char c = s_[pos_];
    if (c == '{') {
      std::size_t at = pos_;
      if (pos_ + 2 < s_.size() && s_[pos_ + 2] == '}' && (s_[pos_ + 1] == '5' || s_[pos_ + 1] == '6')) {
        int order = s_[pos_ + 1] - '0';
        pos_ += 3;
        return order;
      }
      throw SmilesError("malformed bond order extension", at);
    }
    ++pos_;
    switch (c) {
      case '-': return 1;
      case '=': return 2;
      case '#': return 3;
      default: return 4;
    }
  }

  void ring_closure(int number, std::size_t at) {
    if (prev_ < 0) throw SmilesError("ring closure without atom", at);
    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_[number] = {prev_, pending_order_, at};
    } else {
      RingOpen open = it->second;
      rings_.erase(it);
      int order = pending_order_;
      if (open.order != 0 && order != 0 && open.order != order)
        throw SmilesError("conflicting ring closure bond orders", at);
      if (order == 0) order = open.order;
      if (open.atom == prev_) throw SmilesError("ring closure to same atom", at);
      add_bond(open.atom, prev_, order, at);
    }
    pending_order_ = 0;
  }

  void add_bond(int a, int b, int order, std::size_t at) {
    for (const auto& bond : bonds_)
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
        throw SmilesError("duplicate bond", at);
    RawBond bond{a, b, order == 0 ? 1 : order, false, at};
    if (order == 0 && atoms_[a].aromatic && atoms_[b].aromatic) bond.aromatic = true;
    bonds_.push_back(bond);
  }

  bool match_symbol(Element& e, bool& aromatic) {
    auto two = s_.substr(pos_, 2);
    if (two == "Cl") { e = Element::Cl; pos_ += 2; return true; }
    if (two == "Br") { e = Element::Br; pos_ += 2; return true; }
    aromatic = false;
    switch (peek()) {
      case 'C': e = Element::C; break;
      case 'N': e = Element::N; break;
      case 'O': e = Element::O; break;
      case 'P': e = Element::P; break;
      case 'S': e = Element::S; break;
      case 'F': e = Element::F; break;
      case 'I': e = Element::I; break;
      case 'c': e = Element::C; aromatic = true; break;
      case 'n': e = Element::N; aromatic = true; break;
      case 'o': e = Element::O; aromatic = true; break;
      case 'p': e = Element::P; aromatic = true; break;
      case 's': e = Element::S; aromatic = true; break;
      default: return false;
    }
    ++pos_;
    return true;
  }

  int parse_atom() {
    RawAtom atom;
    atom.offset = pos_;
    if (peek() == '*') {
      atom.wildcard = true;
      ++pos_;
    } else if (peek() == '[') {
      atom.bracket = true;
      ++pos_;
      if (peek() == '*') {
        atom.wildcard = true;
        ++pos_;
      } else if (!match_symbol(atom.element, atom.aromatic)) {
        throw SmilesError("unsupported element", pos_);
      }
      if (peek() == '@') {
        ++pos_;
        atom.chirality = Chirality::CCW;
        if (peek() == '@') {
          ++pos_;
          atom.chirality = Chirality::CW;
        }
      }
      if (peek() == 'H') {
        ++pos_;
        atom.hydrogens = 1;
        if (std::isdigit(static_cast<unsigned char>(peek()))) atom.hydrogens = s_[pos_++] - '0';
      }
      if (peek() == '+' || peek() == '-') {
        int sign = peek() == '+' ? 1 : -1;
        std::size_t at = pos_;
        ++pos_;
        int magnitude = 1;
        if (std::isdigit(static_cast<unsigned char>(peek()))) {
          magnitude = s_[pos_++] - '0';
        } else {
          while (peek() == (sign > 0 ? '+' : '-')) {
            ++magnitude;
            ++pos_;
          }
        }
        if (magnitude > 1) throw SmilesError("unsupported formal charge", at);
        atom.charge = sign * magnitude;
      }
      if (peek() != ']') throw SmilesError("malformed bracket atom", pos_);
      ++pos_;
    } else {
      if (!match_symbol(atom.element, atom.aromatic)) throw SmilesError("unsupported element", pos_);
    }
    if (!atom.wildcard) {
      Chirality chir = atom.aromatic ? Chirality::None : atom.chirality;
      if (atom.aromatic && atom.chirality != Chirality::None)
        throw SmilesError("chirality on aromatic atom not supported", atom.offset);
      if (!AtomToken::make(atom.element, atom.charge, chir))
        throw SmilesError("atom outside vocabulary", atom.offset);
    }
    atoms_.push_back(atom);
    return static_cast<int>(atoms_.size()) - 1;
  }

  // Chooses double bonds among aromatic bonds so every aromatic atom with a
  // free valence gets exactly one. Backtracking, most constrained atom first.
  void kekulize(std::vector<RawBond>& bonds) {
    const int n = static_cast<int>(atoms_.size());
    std::vector<int> explicit_sum(n, 0);
    for (const auto& b : bonds) {
      explicit_sum[b.a] += b.aromatic ? 1 : b.order;
      explicit_sum[b.b] += b.aromatic ? 1 : b.order;
    }
    std::vector<bool> needs(n, false);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      const auto& a = atoms_[i];
      if (!a.aromatic) continue;
      int free = kekule_valence(a.element, a.charge) - explicit_sum[i] - a.hydrogens;
      needs[i] = free >= 1;
      any = any || needs[i];
    }
    if (!any) return;
    std::vector<std::vector<int>> candidates(n);  // bond indices
    for (int k = 0; k < static_cast<int>(bonds.size()); ++k) {
      const auto& b = bonds[k];
      if (b.aromatic && needs[b.a] && needs[b.b]) {
        candidates[b.a].push_back(k);
        candidates[b.b].push_back(k);
      }
    }
    std::vector<int> partner_bond(n, -1);
    std::function<bool()> solve = [&]() -> bool {
      int best = -1, best_count = 1 << 30;
      for (int i = 0; i < n; ++i) {
        if (!needs[i] || partner_bond[i] != -1) continue;
        int count = 0;
        for (int k : candidates[i]) {
          int other = bonds[k].a == i ? bonds[k].b : bonds[k].a;
          if (partner_bond[other] == -1) ++count;
        }
        if (count < best_count) {
          best = i;
          best_count = count;
        }
      }
      if (best == -1) return true;
      if (best_count == 0) return false;
      for (int k : candidates[best]) {
        int other = bonds[k].a == best ? bonds[k].b : bonds[k].a;
        if (partner_bond[other] != -1) continue;
        partner_bond[best] = partner_bond[other] = k;
        if (solve()) return true;
        partner_bond[best] = partner_bond[other] = -1;
      }
      return false;
    };
    if (!solve()) {
      std::size_t at = 0;
      for (int i = 0; i < n; ++i)
        if (needs[i]) {
          at = atoms_[i].offset;
          break;
        }
      throw SmilesError("cannot kekulize aromatic system", at);
    }
    for (int i = 0; i < n; ++i)
      if (partner_bond[i] != -1) bonds[partner_bond[i]].order = 2;
  }

  ParsedSmiles finish() {
    std::vector<RawBond> kept;
    std::vector<bool> attach(atoms_.size(), false);
    for (const auto& b : bonds_) {
      bool wa = atoms_[b.a].wildcard, wb = atoms_[b.b].wildcard;
      if (wa && wb) continue;
      if (wa) attach[b.b] = true;
      else if (wb) attach[b.a] = true;
      else kept.push_back(b);
    }
    kekulize(kept);

    std::vector<int> index(atoms_.size(), -1);
    std::vector<AtomToken> tokens;
    ParsedSmiles out;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      const auto& a = atoms_[i];
      if (a.wildcard) continue;
      index[i] = static_cast<int>(tokens.size());
      tokens.push_back(*AtomToken::make(a.element, a.charge, a.chirality));
      if (attach[i]) out.attachment_points.push_back(index[i]);
    }
    if (tokens.empty()) throw SmilesError("no atoms", 0);
    std::vector<int> used(tokens.size(), 0);
    std::vector<Bond> bonds;
    for (const auto& b : kept) {
      int u = index[b.a], v = index[b.b];
      used[u] += b.order;
      used[v] += b.order;
      bonds.push_back({std::min(u, v), std::max(u, v), b.order});
    }
    for (std::size_t i = 0; i < atoms_.size(); ++i)
      if (index[i] >= 0 && used[index[i]] > tokens[index[i]].max_valence())
        throw SmilesError("valence exceeded", atoms_[i].offset);
    out.graph = MolecularGraph::from_parts(std::move(tokens), bonds);
    if (!out.graph.is_connected()) throw SmilesError("disconnected molecule", 0);
    return out;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int prev_ = -1;
  int pending_order_ = 0;
  std::size_t pending_offset_ = 0;
  std::vector<RawAtom> atoms_;
  std::vector<RawBond> bonds_;
  std::vector<std::pair<int, std::size_t>> branches_;
  std::map<int, RingOpen> rings_;
};

std::string bond_symbol(int order) {
  switch (order) {
    case 1: return "";
    case 2: return "=";
    case 3: return "#";
    case 4: return "$";
    case 5: return "{5}";
    default: return "{6}";
  }
}

std::string ring_label(int d) {
  if (d < 10) return std::string(1, static_cast<char>('0' + d));
  return "%" + std::to_string(d);
}

}  // namespace

ParsedSmiles parse_smiles_annotated(std::string_view text) { return Parser(text).run(); }

MolecularGraph parse_smiles(std::string_view text) { return Parser(text).run().graph; }

// ---------------------------------------------------------------------------

namespace {

// Re-labels keys with dense class ids in sorted key order.
template <class Key>
std::vector<int> dense_classes(const std::vector<Key>& keys) {
  std::vector<int> idx(keys.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[a] < keys[b]; });
  std::vector<int> cls(keys.size(), 0);
  int c = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0 && keys[idx[k - 1]] < keys[idx[k]]) ++c;
    cls[idx[k]] = c;
  }
  return cls;
}

int class_count(const std::vector<int>& cls) {
  return cls.empty() ? 0 : *std::max_element(cls.begin(), cls.end()) + 1;
}

std::vector<int> refine(const MolecularGraph& g, std::vector<int> cls) {
  const int n = g.atom_count();
  int count = class_count(cls);
  while (true) {
    using Key = std::pair<int, std::vector<std::pair<int, int>>>;
    std::vector<Key> keys(n);
    for (int a = 0; a < n; ++a) {
      keys[a].first = cls[a];
      for (const auto& [w, order] : g.neighbors(a)) keys[a].second.emplace_back(cls[w], order);
      std::sort(keys[a].second.begin(), keys[a].second.end());
    }
    auto next = dense_classes(keys);
    int next_count = class_count(next);
    if (next_count == count) return next;
    cls = std::move(next);
    count = next_count;
  }
}

}  // namespace

std::vector<int> canonical_rank(const MolecularGraph& g) {
  const int n = g.atom_count();
  std::vector<std::tuple<int, int, int>> init(n);
  for (int a = 0; a < n; ++a) init[a] = {-g.atom(a).id(), g.degree(a), g.used_valence(a)};
  auto cls = refine(g, dense_classes(init));
  while (class_count(cls) < n) {
    std::vector<int> size(n, 0);
    for (int c : cls) ++size[c];
    int tied = 0;
    while (size[tied] < 2) ++tied;
    int chosen = -1;
    for (int a = 0; a < n; ++a)
      if (cls[a] == tied) {
        chosen = a;
        break;
      }
    std::vector<int> split(n);
    for (int a = 0; a < n; ++a) split[a] = 2 * cls[a] + ((cls[a] == tied && a != chosen) ? 1 : 0);
    cls = refine(g, dense_classes(split));
  }
  return cls;
}

WrittenSmiles write_smiles_with_order(const MolecularGraph& g) {
  const int n = g.atom_count();
  WrittenSmiles out;
  if (n == 0) return out;
  auto rank = canonical_rank(g);
  int root = static_cast<int>(std::min_element(rank.begin(), rank.end()) - rank.begin());

  auto sorted_neighbors = [&](int a) {
    auto nb = g.neighbors(a);
    std::sort(nb.begin(), nb.end(), [&](auto x, auto y) { return rank[x.first] < rank[y.first]; });
    return nb;
  };

  // Pass 1: DFS spanning tree; non-tree bonds become ring closures.
  std::vector<int> visit(n, -1);
  std::vector<std::vector<int>> children(n);
  std::vector<std::vector<int>> closures(n);  // partner atoms
  {
    int counter = 0;
    std::function<void(int, int)> dfs = [&](int a, int parent) {
      visit[a] = counter++;
      for (const auto& [w, order] : sorted_neighbors(a)) {
        if (w == parent) continue;
        if (visit[w] == -1) {
          children[a].push_back(w);
          dfs(w, a);
        } else if (visit[w] < visit[a]) {
          closures[a].push_back(w);
          closures[w].push_back(a);
        }
      }
    };
    dfs(root, -1);
  }

  // Pass 2: emit.
  std::map<std::pair<int, int>, int> open_digit;
  std::vector<bool> digit_used(100, false);
  std::string& s = out.text;
  std::function<void(int)> emit = [&](int a) {
    out.order.push_back(a);
    s += g.atom(a).symbol();
    auto& rc = closures[a];
    std::sort(rc.begin(), rc.end(), [&](int x, int y) { return visit[x] < visit[y]; });
    std::vector<int> to_free;
    for (int w : rc) {
      auto key = std::minmax(a, w);
      auto it = open_digit.find(key);
      if (it != open_digit.end()) {
        s += bond_symbol(g.bond_order(a, w)) + ring_label(it->second);
        to_free.push_back(it->second);
        open_digit.erase(it);
      } else {
        int d = 1;
        while (digit_used[d]) ++d;
        digit_used[d] = true;
        open_digit[key] = d;
        s += bond_symbol(g.bond_order(a, w)) + ring_label(d);
      }
    }
    for (int d : to_free) digit_used[d] = false;
    const auto& ch = children[a];
    for (std::size_t k = 0; k < ch.size(); ++k) {
      bool branch = k + 1 < ch.size();
      if (branch) s += "(";
      s += bond_symbol(g.bond_order(a, ch[k]));
      emit(ch[k]);
      if (branch) s += ")";
    }
  };
  emit(root);
  return out;
}

std::string write_smiles(const MolecularGraph& g) { return write_smiles_with_order(g).text; }

MolecularGraph murcko_scaffold(const MolecularGraph& g) {
  const int n = g.atom_count();
  std::vector<int> degree(n);
  std::vector<bool> alive(n, true);
  std::vector<int> queue;
  for (int a = 0; a < n; ++a) {
    degree[a] = g.degree(a);
    if (degree[a] <= 1) queue.push_back(a);
  }
  while (!queue.empty()) {
    int a = queue.back();
    queue.pop_back();
    if (!alive[a]) continue;
    alive[a] = false;
    for (const auto& [w, order] : g.neighbors(a)) {
      if (alive[w] && --degree[w] <= 1) queue.push_back(w);
    }
  }
  std::vector<int> index(n, -1);
  std::vector<AtomToken> atoms;
  for (int a = 0; a < n; ++a)
    if (alive[a]) {
      index[a] = static_cast<int>(atoms.size());
      atoms.push_back(g.atom(a));
    }
  std::vector<Bond> bonds;
  for (const auto& b : g.bonds())
    if (alive[b.u] && alive[b.v]) bonds.push_back({index[b.u], index[b.v], b.order});
  return MolecularGraph::from_parts(std::move(atoms), bonds);
}

// ---------------------------------------------------------------------------

MoleculeFile read_molecule_stream(std::istream& in) {
  MoleculeFile out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string smiles = line, id;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      smiles = line.substr(0, tab);
      id = line.substr(tab + 1);
    }
    auto trim = [](std::string& s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    trim(smiles);
    trim(id);
    if (id.empty()) id = std::to_string(number);
    try {
      out.records.push_back({id, smiles, parse_smiles(smiles), number});
    } catch (const std::exception& e) {
      out.errors.push_back({number, e.what()});
    }
  }
  return out;
}

MoleculeFile read_molecule_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open molecule file: " + path.string());
  return read_molecule_stream(in);
}

}  // namespace molbuild
