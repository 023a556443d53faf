// Copyright 2026 The molspace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace molspace::chem {

/// Element symbol for atomic number 1..118; empty for anything else.
std::string_view element_symbol(int atomic_number);
/// Atomic number for a capitalised element symbol; 0 if unknown.
int atomic_number(std::string_view symbol);

enum class BondOrder : std::uint8_t { kSingle = 1, kDouble = 2, kTriple = 3, kAromatic = 4 };

struct Atom {
  int atomic_number = 0;
  int charge = 0;
  bool aromatic = false;
  bool bracket = false;
  /// Hydrogens written inside brackets.
  int explicit_h = 0;
  /// Hydrogens implied by the organic-subset valence rules.
  int implicit_h = 0;

  int total_h() const { return explicit_h + implicit_h; }
  bool operator==(const Atom&) const = default;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::kSingle;
  bool operator==(const Bond&) const = default;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  /// Neighbour lists as (neighbour index, bond index).
  std::vector<std::vector<std::pair<int, int>>> adjacency() const;
};

/// Parses the supported SMILES subset: organic-subset atoms (B C N O P S F Cl
/// Br I and aromatic b c n o p s), bracket atoms with element, aromatic flag,
/// H count and charge, ring closures (digits and %nn), branches, and the bond
/// symbols - = # :. Aromaticity is taken as written. Errors are ParseError
/// carrying the byte offset.
MolGraph parse_smiles(std::string_view text);

// ---------------------------------------------------------------------------
// Tokens

/// Greedy longest match: bracket expressions and %nn labels are single tokens,
/// Cl and Br are single tokens, everything else is one character. Throws
/// ParseError for characters outside the token table.
std::vector<std::string> tokenize_smiles(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

/// True if the token denotes an aromatic atom (lowercase organic atom or a
/// bracket atom with a lowercase element).
bool is_aromatic_token(std::string_view token);

// ---------------------------------------------------------------------------
// Fingerprints

class Fingerprint {
 public:
  Fingerprint() = default;
  /// `nbits` must be a power of two.
  Fingerprint(std::size_t nbits, int radius);

  std::size_t nbits() const { return nbits_; }
  int radius() const { return radius_; }
  void set(std::size_t bit) { words_[bit >> 6] |= std::uint64_t{1} << (bit & 63); }
  bool test(std::size_t bit) const { return (words_[bit >> 6] >> (bit & 63)) & 1; }
  std::size_t popcount() const;
  const std::vector<std::uint64_t>& words() const { return words_; }

  std::string to_hex() const;
  static Fingerprint from_hex(std::string_view hex, int radius = 0);

  bool operator==(const Fingerprint&) const = default;

 private:
  std::size_t nbits_ = 0;
  int radius_ = 0;
  std::vector<std::uint64_t> words_;
};

inline constexpr int kDefaultRadius = 2;
inline constexpr std::size_t kDefaultBits = 2048;

/// Per-atom environment identifiers for rounds 0..radius, before folding.
/// Round 0 hashes (element, charge, aromatic, heavy degree, H count); round r
/// hashes the atom's round r-1 identifier with its sorted (bond order,
/// neighbour identifier) pairs.
std::vector<std::vector<std::uint64_t>> morgan_environments(const MolGraph& graph, int radius);

/// Circular fingerprint: every environment identifier sets bit (id mod nbits).
Fingerprint morgan_fingerprint(const MolGraph& graph, int radius = kDefaultRadius,
                               std::size_t nbits = kDefaultBits);

/// |a & b| / |a | b|; 1.0 when both are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

/// 1 - mean pairwise Tanimoto over all unordered pairs.
double diversity(const std::vector<Fingerprint>& fps);

/// Fingerprint dump: one "id<TAB>hex" line per fingerprint.
void save_fingerprints(const std::vector<std::string>& ids, const std::vector<Fingerprint>& fps,
                       const std::filesystem::path& path);
std::vector<std::pair<std::string, Fingerprint>> load_fingerprints(const std::filesystem::path& path);

}  // namespace molspace::chem
