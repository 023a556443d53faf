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

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "molspace/rng.hpp"

namespace molspace::geom {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr int kMaxAtomicNumber = 118;

/// Heavy-atom point cloud: atomic numbers in [2, 118] plus coordinates in Å.
class AtomicPointCloud {
 public:
  AtomicPointCloud() = default;
  /// Validates every invariant; throws InvariantError otherwise.
  AtomicPointCloud(std::vector<int> atomic_numbers, std::vector<Vec3> positions);

  std::size_t size() const { return atomic_numbers_.size(); }
  const std::vector<int>& atomic_numbers() const { return atomic_numbers_; }
  const std::vector<Vec3>& positions() const { return positions_; }

  bool operator==(const AtomicPointCloud&) const = default;

 private:
  std::vector<int> atomic_numbers_;
  std::vector<Vec3> positions_;
};

/// x -> R x + t with R orthogonal (det +1 or -1).
struct RigidMotion {
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};

  /// Throws InvariantError unless ||R^T R - I||_inf < 1e-10.
  void validate() const;
  double determinant() const;
  Vec3 apply(const Vec3& p) const;
};

/// Uniform random rotation, optionally composed with a reflection, plus a
/// translation drawn uniformly from [-max_translation, max_translation]^3.
RigidMotion random_motion(Rng& rng, bool reflect, double max_translation);

/// Unweighted mean of the positions.
Vec3 center_of_positions(const AtomicPointCloud& cloud);
AtomicPointCloud apply_rigid_motion(const AtomicPointCloud& cloud, const RigidMotion& motion);

double distance(const Vec3& a, const Vec3& b);
/// Signed volume of the tetrahedron (a, b, c, d) times 6.
double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

enum class AffinityType { kIC50, kKi, kEC50, kKd };
const char* affinity_type_name(AffinityType t);
std::optional<AffinityType> parse_affinity_type(const std::string& s);

struct ConformerRecord {
  std::string id;
  std::string smiles;
  std::string dataset;
  AtomicPointCloud cloud;

  bool operator==(const ConformerRecord&) const = default;
};

struct LigandPocketPair {
  std::string ligand_id;
  std::string pocket_id;
  std::vector<AtomicPointCloud> ligand_conformers;
  AtomicPointCloud pocket;
  double affinity_value = 0.0;
  AffinityType affinity_type = AffinityType::kIC50;

  bool operator==(const LigandPocketPair&) const = default;
};

// JSONL I/O. Conformer lines:
//   {"id": str, "smiles": str, "dataset": str, "z": [int...], "xyz": [[f,f,f]...]}
// Pair lines:
//   {"ligand_id", "pocket_id", "affinity_value": f, "affinity_type": "IC50"|"Ki"|"EC50"|"Kd",
//    "ligand": {z, xyz} or [{z, xyz}, ...], "pocket": {z, xyz}}
// Every failure is reported as a FormatError naming the 1-based line.

/// `allowed_datasets`, when non-empty, is the declared label set.
std::vector<ConformerRecord> load_conformers(const std::filesystem::path& path,
                                             const std::set<std::string>& allowed_datasets = {});
std::vector<ConformerRecord> parse_conformers(const std::string& text, const std::string& origin,
                                              const std::set<std::string>& allowed_datasets = {});
void save_conformers(const std::vector<ConformerRecord>& records, const std::filesystem::path& path);
std::string format_conformers(const std::vector<ConformerRecord>& records);

std::vector<LigandPocketPair> load_pairs(const std::filesystem::path& path);
std::vector<LigandPocketPair> parse_pairs(const std::string& text, const std::string& origin);
void save_pairs(const std::vector<LigandPocketPair>& pairs, const std::filesystem::path& path);
std::string format_pairs(const std::vector<LigandPocketPair>& pairs);

}  // namespace molspace::geom
