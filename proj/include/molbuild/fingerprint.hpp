#pragma once

// Circular fingerprints, Tanimoto similarity, Butina clustering and the
// cluster-based scaffold split.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "molbuild/chem.hpp"

namespace molbuild {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Fingerprint {
 public:
  explicit Fingerprint(std::size_t n_bits = 2048) : n_bits_(n_bits), words_((n_bits + 63) / 64, 0) {
    if (n_bits == 0) throw std::invalid_argument("fingerprint needs at least one bit");
  }

  std::size_t size() const { return n_bits_; }
  void set(std::size_t bit) { words_.at(bit / 64) |= std::uint64_t{1} << (bit % 64); }
  bool test(std::size_t bit) const { return (words_.at(bit / 64) >> (bit % 64)) & 1U; }
  std::size_t count() const;
  std::vector<std::size_t> on_bits() const;
  const std::vector<std::uint64_t>& words() const { return words_; }

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

 private:
  std::size_t n_bits_;
  std::vector<std::uint64_t> words_;
};

// Morgan-style environments. Atom invariants are (element, charge, degree,
// used valence); each round mixes the sorted (neighbour hash, bond order)
// pairs. An environment whose bond set did not grow, or duplicates a bond set
// already emitted, is skipped. Hashes are folded modulo n_bits.
Fingerprint morgan_fingerprint(const MolecularGraph& g, int radius = 2, std::size_t n_bits = 2048);

// |a & b| / |a | b|; 1.0 when both are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// Clusters are lists of input indices; the centroid comes first.
using Cluster = std::vector<int>;

// Butina clustering with neighbours at similarity >= cutoff. The unassigned
// item with the most unassigned neighbours becomes the next centroid; equal
// counts go to the lower index.
std::vector<Cluster> butina_cluster(const std::vector<Fingerprint>& fps, double cutoff);

enum class Fold { Train, Val, Test };
std::string fold_name(Fold f);

struct ScaffoldEntry {
  int id = 0;
  std::string smiles;  // canonical
  int cluster = 0;
  Fold fold = Fold::Train;
};

struct ScaffoldSplit {
  std::uint64_t seed = 0;
  std::vector<ScaffoldEntry> scaffolds;
  std::size_t cluster_count = 0;

  std::size_t fold_size(Fold f) const;
  std::vector<std::string> fold_smiles(Fold f) const;
};

struct SplitOptions {
  std::uint64_t seed = 0;
  std::size_t test_count = 500;
  std::size_t val_count = 0;
  double cutoff = 0.4;
  int radius = 2;
  std::size_t n_bits = 2048;
};

// Murcko scaffolds of the inputs are deduplicated by canonical SMILES (first
// occurrence order; acyclic inputs contribute nothing), fingerprinted,
// Butina-clustered and whole clusters are assigned to folds after a seeded
// shuffle. A fold takes each cluster that still fits its remaining quota; if
// the quota is not met exactly after one pass, the smallest remaining cluster
// is added.
ScaffoldSplit make_split(const std::vector<MolecularGraph>& molecules, const SplitOptions& opts);

// Tab-separated: id, canonical SMILES, cluster id, fold. One header comment.
void write_split(std::ostream& out, const ScaffoldSplit& split);
ScaffoldSplit read_split(std::istream& in);

}  // namespace molbuild
