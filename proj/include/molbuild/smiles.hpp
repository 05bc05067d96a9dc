#pragma once

// A SMILES subset covering the atom vocabulary, canonical atom ranking, and
// Murcko scaffolds.
//
// Grammar accepted by parse_smiles:
//   atoms     C N O P S F Cl Br I, aromatic c n o p s, bracket atoms
//             [<sym><@|@@>?<H<n>?>?<+|->?] (hydrogen counts are read and
//             dropped; hydrogens are implicit everywhere in this library)
//   bonds     - = # $ and the extensions {5} {6} for orders five and six
//   rings     digits 0-9 and %nn
//   branches  ( )
//   wildcard  * (attachment point; recorded, never part of the graph)
// Not supported: '.', isotopes, '/' '\' bond stereo, ':' aromatic bonds.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "molbuild/chem.hpp"

namespace molbuild {

class SmilesError : public std::runtime_error {
 public:
  SmilesError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct ParsedSmiles {
  MolecularGraph graph;
  // Graph atoms that carried a bond to a '*' wildcard.
  std::vector<int> attachment_points;
};

MolecularGraph parse_smiles(std::string_view text);
ParsedSmiles parse_smiles_annotated(std::string_view text);

// Canonical ranks: rank[atom] in 0..n-1, bijective. Initial invariants order
// atoms by descending token id, then ascending degree and used valence, so
// rank 0 falls on the heaviest / most specific atom type present. Classes are
// refined by sorted (neighbour class, bond order) multisets until stable; a
// remaining tie is broken by promoting the lowest input index of the
// lowest tied class and refining again.
std::vector<int> canonical_rank(const MolecularGraph& g);

struct WrittenSmiles {
  std::string text;
  // order[k] = graph atom written k-th; parse_smiles(text) numbers atoms in
  // this order.
  std::vector<int> order;
};

// Canonical Kekule SMILES: depth-first from rank 0, branches in rank order.
WrittenSmiles write_smiles_with_order(const MolecularGraph& g);
std::string write_smiles(const MolecularGraph& g);

// Ring systems plus linkers, obtained by repeatedly removing atoms of degree
// <= 1. Returns an empty graph for acyclic molecules.
MolecularGraph murcko_scaffold(const MolecularGraph& g);

// One-SMILES-per-line molecule files with an optional tab-separated id;
// '#' lines and blank lines are ignored.
struct MoleculeRecord {
  std::string id;
  std::string smiles;
  MolecularGraph graph;
  std::size_t line = 0;
};

struct MoleculeFileError {
  std::size_t line = 0;
  std::string message;
};

struct MoleculeFile {
  std::vector<MoleculeRecord> records;
  std::vector<MoleculeFileError> errors;
};

MoleculeFile read_molecule_stream(std::istream& in);
MoleculeFile read_molecule_file(const std::filesystem::path& path);

}  // namespace molbuild
