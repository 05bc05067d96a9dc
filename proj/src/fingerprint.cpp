#include "molbuild/fingerprint.hpp"

#include <algorithm>
#include <bit>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "molbuild/rng.hpp"
#include "molbuild/smiles.hpp"

namespace molbuild {

std::size_t Fingerprint::count() const {
  std::size_t c = 0;
  for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
  return c;
}

std::vector<std::size_t> Fingerprint::on_bits() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_bits_; ++i)
    if (test(i)) out.push_back(i);
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t x) { return splitmix64(h ^ splitmix64(x)); }

}  // namespace

Fingerprint morgan_fingerprint(const MolecularGraph& g, int radius, std::size_t n_bits) {
  Fingerprint fp(n_bits);
  const int n = g.atom_count();
  if (n == 0) return fp;

  std::vector<std::uint64_t> hash(n);
  for (int a = 0; a < n; ++a) {
    const auto& t = g.atom(a);
    std::uint64_t h = mix(0x51ed270b27a1e3c5ULL, static_cast<std::uint64_t>(t.element()));
    h = mix(h, static_cast<std::uint64_t>(t.charge() + 8));
    h = mix(h, static_cast<std::uint64_t>(g.degree(a)));
    h = mix(h, static_cast<std::uint64_t>(g.used_valence(a)));
    hash[a] = h;
    fp.set(h % n_bits);
  }

  // bond index lookup
  std::vector<std::vector<int>> incident(n);
  for (int k = 0; k < g.bond_count(); ++k) {
    incident[g.bonds()[k].u].push_back(k);
    incident[g.bonds()[k].v].push_back(k);
  }

  std::vector<std::vector<bool>> atoms_in(n, std::vector<bool>(n, false));
  std::vector<std::vector<int>> bondset(n);
  for (int a = 0; a < n; ++a) atoms_in[a][a] = true;
  std::set<std::vector<int>> seen;

  for (int r = 1; r <= radius; ++r) {
    std::vector<std::uint64_t> next(n);
    struct Candidate {
      std::vector<int> bonds;
      std::uint64_t hash;
    };
    std::vector<Candidate> candidates;
    for (int a = 0; a < n; ++a) {
      std::vector<std::pair<std::uint64_t, int>> nb;
      for (const auto& [w, order] : g.neighbors(a)) nb.emplace_back(hash[w], order);
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = mix(hash[a], static_cast<std::uint64_t>(r));
      for (const auto& [nh, order] : nb) h = mix(mix(h, nh), static_cast<std::uint64_t>(order));
      next[a] = h;

      // grow the environment by one shell
      std::vector<bool> grown = atoms_in[a];
      std::vector<int> bonds;
      for (int x = 0; x < n; ++x) {
        if (!atoms_in[a][x]) continue;
        for (int k : incident[x]) bonds.push_back(k);
        for (const auto& [w, order] : g.neighbors(x)) grown[w] = true;
      }
      std::sort(bonds.begin(), bonds.end());
      bonds.erase(std::unique(bonds.begin(), bonds.end()), bonds.end());
      atoms_in[a] = std::move(grown);
      if (bonds.empty() || bonds == bondset[a]) continue;
      bondset[a] = bonds;
      candidates.push_back({std::move(bonds), h});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
      return std::tie(x.bonds, x.hash) < std::tie(y.bonds, y.hash);
    });
    for (auto& c : candidates) {
      if (!seen.insert(c.bonds).second) continue;
      fp.set(c.hash % n_bits);
    }
    hash = std::move(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.size() != b.size()) throw std::invalid_argument("fingerprint size mismatch");
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) {
    both += static_cast<std::size_t>(std::popcount(a.words()[i] & b.words()[i]));
    either += static_cast<std::size_t>(std::popcount(a.words()[i] | b.words()[i]));
  }
  if (either == 0) return 1.0;
  return static_cast<double>(both) / static_cast<double>(either);
}

std::vector<Cluster> butina_cluster(const std::vector<Fingerprint>& fps, double cutoff) {
  if (!(cutoff > 0.0 && cutoff <= 1.0)) throw std::invalid_argument("cutoff must be in (0, 1]");
  const int n = static_cast<int>(fps.size());
  std::vector<std::vector<int>> neighbors(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (tanimoto(fps[i], fps[j]) >= cutoff) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
  std::vector<bool> assigned(n, false);
  std::vector<int> free_count(n);
  for (int i = 0; i < n; ++i) free_count[i] = static_cast<int>(neighbors[i].size());
  std::vector<Cluster> clusters;
  for (int remaining = n; remaining > 0;) {
    int centroid = -1;
    for (int i = 0; i < n; ++i)
      if (!assigned[i] && (centroid < 0 || free_count[i] > free_count[centroid])) centroid = i;
    Cluster c{centroid};
    for (int j : neighbors[centroid])
      if (!assigned[j]) c.push_back(j);
    for (int m : c) {
      assigned[m] = true;
      --remaining;
      for (int j : neighbors[m]) --free_count[j];
    }
    clusters.push_back(std::move(c));
  }
  return clusters;
}

std::string fold_name(Fold f) {
  switch (f) {
    case Fold::Train: return "train";
    case Fold::Val: return "val";
    case Fold::Test: return "test";
  }
  return "?";
}

std::size_t ScaffoldSplit::fold_size(Fold f) const {
  return static_cast<std::size_t>(
      std::count_if(scaffolds.begin(), scaffolds.end(), [f](const auto& s) { return s.fold == f; }));
}

std::vector<std::string> ScaffoldSplit::fold_smiles(Fold f) const {
  std::vector<std::string> out;
  for (const auto& s : scaffolds)
    if (s.fold == f) out.push_back(s.smiles);
  return out;
}

ScaffoldSplit make_split(const std::vector<MolecularGraph>& molecules, const SplitOptions& opts) {
  std::vector<MolecularGraph> scaffolds;
  std::vector<std::string> smiles;
  std::unordered_set<std::string> known;
  for (const auto& m : molecules) {
    auto core = murcko_scaffold(m);
    if (core.empty()) continue;
    auto s = write_smiles(core);
    if (known.insert(s).second) {
      smiles.push_back(s);
      scaffolds.push_back(std::move(core));
    }
  }
  if (opts.test_count + opts.val_count >= scaffolds.size())
    throw ConfigError("test_count + val_count must be smaller than the number of unique scaffolds (" +
                      std::to_string(scaffolds.size()) + ")");

  std::vector<Fingerprint> fps;
  fps.reserve(scaffolds.size());
  for (const auto& s : scaffolds) fps.push_back(morgan_fingerprint(s, opts.radius, opts.n_bits));
  auto clusters = butina_cluster(fps, opts.cutoff);

  std::vector<int> order(clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng::substream(opts.seed, "split");
  rng.shuffle(order);

  std::vector<int> cluster_fold(clusters.size(), -1);
  auto fill = [&](std::size_t quota, int fold) {
    std::size_t remaining = quota;
    for (int c : order) {
      if (remaining == 0) break;
      if (cluster_fold[c] == -1 && clusters[c].size() <= remaining) {
        cluster_fold[c] = fold;
        remaining -= clusters[c].size();
      }
    }
    if (remaining > 0) {
      int best = -1;
      for (int c : order)
        if (cluster_fold[c] == -1 && (best < 0 || clusters[c].size() < clusters[best].size())) best = c;
      if (best >= 0) cluster_fold[best] = fold;
    }
  };
  fill(opts.test_count, static_cast<int>(Fold::Test));
  fill(opts.val_count, static_cast<int>(Fold::Val));

  ScaffoldSplit split;
  split.seed = opts.seed;
  split.cluster_count = clusters.size();
  split.scaffolds.resize(scaffolds.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (int m : clusters[c]) {
      auto& e = split.scaffolds[m];
      e.id = m;
      e.smiles = smiles[m];
      e.cluster = static_cast<int>(c);
      e.fold = cluster_fold[c] == -1 ? Fold::Train : static_cast<Fold>(cluster_fold[c]);
    }
  }
  return split;
}

void write_split(std::ostream& out, const ScaffoldSplit& split) {
  out << "# id\tsmiles\tcluster\tfold\n";
  for (const auto& s : split.scaffolds)
    out << s.id << '\t' << s.smiles << '\t' << s.cluster << '\t' << fold_name(s.fold) << '\n';
}

ScaffoldSplit read_split(std::istream& in) {
  ScaffoldSplit split;
  std::string line;
  std::size_t number = 0;
  std::set<int> clusters;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ScaffoldEntry e;
    std::string fold;
    if (!(fields >> e.id >> e.smiles >> e.cluster >> fold))
      throw std::runtime_error("malformed split line " + std::to_string(number));
    if (fold == "train") e.fold = Fold::Train;
    else if (fold == "val") e.fold = Fold::Val;
    else if (fold == "test") e.fold = Fold::Test;
    else throw std::runtime_error("unknown fold on split line " + std::to_string(number));
    clusters.insert(e.cluster);
    split.scaffolds.push_back(std::move(e));
  }
  split.cluster_count = clusters.size();
  return split;
}

}  // namespace molbuild
