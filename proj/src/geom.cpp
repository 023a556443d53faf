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

#include "molspace/geom.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace::geom {

using nlohmann::json;

AtomicPointCloud::AtomicPointCloud(std::vector<int> atomic_numbers, std::vector<Vec3> positions)
    : atomic_numbers_(std::move(atomic_numbers)), positions_(std::move(positions)) {
  if (atomic_numbers_.size() != positions_.size()) {
    throw InvariantError("cloud.size", std::to_string(atomic_numbers_.size()) +
                                           " atomic numbers but " +
                                           std::to_string(positions_.size()) + " positions");
  }
  if (atomic_numbers_.empty()) throw InvariantError("cloud.non_empty", "cloud has no atoms");
  for (std::size_t i = 0; i < atomic_numbers_.size(); ++i) {
    const int z = atomic_numbers_[i];
    if (z == 1) {
      throw InvariantError("cloud.heavy_atoms_only", "hydrogen at atom " + std::to_string(i));
    }
    if (z < 1 || z > kMaxAtomicNumber) {
      throw InvariantError("cloud.atomic_number",
                           "atomic number " + std::to_string(z) + " at atom " + std::to_string(i));
    }
    for (double c : positions_[i]) {
      if (!std::isfinite(c)) {
        throw InvariantError("cloud.finite", "non-finite coordinate at atom " + std::to_string(i));
      }
    }
  }
}

void RigidMotion::validate() const {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += rotation[k][i] * rotation[k][j];
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  if (!(worst < 1e-10)) {
    throw InvariantError("motion.orthogonal", "||R^T R - I||_inf = " + std::to_string(worst));
  }
  for (double t : translation)
    if (!std::isfinite(t)) throw InvariantError("motion.finite", "non-finite translation");
}

double RigidMotion::determinant() const {
  const Mat3& r = rotation;
  return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
         r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
         r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
}

Vec3 RigidMotion::apply(const Vec3& p) const {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    out[i] = rotation[i][0] * p[0] + rotation[i][1] * p[1] + rotation[i][2] * p[2] + translation[i];
  }
  return out;
}

RigidMotion random_motion(Rng& rng, bool reflect, double max_translation) {
  // Shoemake's uniform unit quaternion.
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  const double tau = 2.0 * 3.14159265358979323846;
  const double w = a * std::sin(tau * u2), x = a * std::cos(tau * u2);
  const double y = b * std::sin(tau * u3), z = b * std::cos(tau * u3);
  RigidMotion m;
  m.rotation = {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                 {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                 {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
  if (reflect) {
    for (auto& row : m.rotation) row[0] = -row[0];
  }
  for (double& t : m.translation) t = rng.uniform(-max_translation, max_translation);
  return m;
}

Vec3 center_of_positions(const AtomicPointCloud& cloud) {
  if (cloud.size() == 0) throw InvariantError("cloud.non_empty", "center of an empty cloud");
  Vec3 c{0, 0, 0};
  for (const auto& p : cloud.positions())
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (double& v : c) v /= static_cast<double>(cloud.size());
  return c;
}

AtomicPointCloud apply_rigid_motion(const AtomicPointCloud& cloud, const RigidMotion& motion) {
  motion.validate();
  std::vector<Vec3> moved;
  moved.reserve(cloud.size());
  for (const auto& p : cloud.positions()) moved.push_back(motion.apply(p));
  return AtomicPointCloud(cloud.atomic_numbers(), std::move(moved));
}

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 w{d[0] - a[0], d[1] - a[1], d[2] - a[2]};
  return u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) +
         u[2] * (v[0] * w[1] - v[1] * w[0]);
}

const char* affinity_type_name(AffinityType t) {
  switch (t) {
    case AffinityType::kIC50: return "IC50";
    case AffinityType::kKi: return "Ki";
    case AffinityType::kEC50: return "EC50";
    case AffinityType::kKd: return "Kd";
  }
  return "?";
}

std::optional<AffinityType> parse_affinity_type(const std::string& s) {
  if (s == "IC50") return AffinityType::kIC50;
  if (s == "Ki") return AffinityType::kKi;
  if (s == "EC50") return AffinityType::kEC50;
  if (s == "Kd") return AffinityType::kKd;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

struct LineError {
  std::string message;
};

const json& field(const json& obj, const char* key) {
  if (!obj.is_object()) throw LineError{"expected a JSON object"};
  auto it = obj.find(key);
  if (it == obj.end()) throw LineError{std::string("missing field '") + key + "'"};
  return *it;
}

std::string string_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_string()) throw LineError{std::string("field '") + key + "' must be a string"};
  return v.get<std::string>();
}

AtomicPointCloud cloud_from_json(const json& obj) {
  const json& z = field(obj, "z");
  const json& xyz = field(obj, "xyz");
  if (!z.is_array() || !xyz.is_array()) throw LineError{"'z' and 'xyz' must be arrays"};
  std::vector<int> numbers;
  for (const auto& v : z) {
    if (!v.is_number_integer()) throw LineError{"'z' entries must be integers"};
    numbers.push_back(v.get<int>());
  }
  std::vector<Vec3> pos;
  for (const auto& row : xyz) {
    if (!row.is_array() || row.size() != 3) throw LineError{"'xyz' rows must have 3 numbers"};
    Vec3 p;
    for (int k = 0; k < 3; ++k) {
      if (!row[k].is_number()) throw LineError{"'xyz' entries must be numbers"};
      p[k] = row[k].get<double>();
    }
    pos.push_back(p);
  }
  try {
    return AtomicPointCloud(std::move(numbers), std::move(pos));
  } catch (const InvariantError& e) {
    throw LineError{e.what()};
  }
}

json cloud_to_json(const AtomicPointCloud& cloud) {
  json xyz = json::array();
  for (const auto& p : cloud.positions()) xyz.push_back({p[0], p[1], p[2]});
  return json{{"z", cloud.atomic_numbers()}, {"xyz", std::move(xyz)}};
}

template <typename Fn>
void for_each_line(const std::string& text, const std::string& origin, Fn fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw LineError{std::string("malformed JSON: ") + e.what()};
      }
      fn(obj);
    } catch (const LineError& e) {
      throw FormatError(origin, lineno, e.message);
    } catch (const json::exception& e) {
      throw FormatError(origin, lineno, e.what());
    }
  }
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

std::vector<ConformerRecord> parse_conformers(const std::string& text, const std::string& origin,
                                              const std::set<std::string>& allowed_datasets) {
  std::vector<ConformerRecord> out;
  std::unordered_set<std::string> seen;
  for_each_line(text, origin, [&](const json& obj) {
    ConformerRecord rec;
    rec.id = string_field(obj, "id");
    if (rec.id.empty()) throw LineError{"conformer.id: empty id"};
    if (!seen.insert(rec.id).second) throw LineError{"conformer.id: duplicate id '" + rec.id + "'"};
    rec.smiles = string_field(obj, "smiles");
    rec.dataset = string_field(obj, "dataset");
    if (!allowed_datasets.empty() && !allowed_datasets.count(rec.dataset)) {
      throw LineError{"conformer.dataset: undeclared label '" + rec.dataset + "'"};
    }
    rec.cloud = cloud_from_json(obj);
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<ConformerRecord> load_conformers(const std::filesystem::path& path,
                                             const std::set<std::string>& allowed_datasets) {
  return parse_conformers(read_text(path), path.string(), allowed_datasets);
}

std::string format_conformers(const std::vector<ConformerRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json obj = cloud_to_json(r.cloud);
    obj["id"] = r.id;
    obj["smiles"] = r.smiles;
    obj["dataset"] = r.dataset;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_conformers(const std::vector<ConformerRecord>& records,
                     const std::filesystem::path& path) {
  io::write_text(path, format_conformers(records));
}

std::vector<LigandPocketPair> parse_pairs(const std::string& text, const std::string& origin) {
  std::vector<LigandPocketPair> out;
  for_each_line(text, origin, [&](const json& obj) {
    LigandPocketPair p;
    p.ligand_id = string_field(obj, "ligand_id");
    p.pocket_id = string_field(obj, "pocket_id");
    if (p.ligand_id.empty() || p.pocket_id.empty()) throw LineError{"pair.ids: empty id"};
    const json& v = field(obj, "affinity_value");
    if (!v.is_number()) throw LineError{"pair.affinity: 'affinity_value' must be a number"};
    p.affinity_value = v.get<double>();
    if (!std::isfinite(p.affinity_value)) throw LineError{"pair.affinity: non-finite value"};
    auto type = parse_affinity_type(string_field(obj, "affinity_type"));
    if (!type) throw LineError{"pair.affinity_type: expected IC50, Ki, EC50 or Kd"};
    p.affinity_type = *type;
    const json& lig = field(obj, "ligand");
    if (lig.is_array()) {
      for (const auto& c : lig) p.ligand_conformers.push_back(cloud_from_json(c));
    } else {
      p.ligand_conformers.push_back(cloud_from_json(lig));
    }
    if (p.ligand_conformers.empty()) throw LineError{"pair.ligand: no ligand conformers"};
    p.pocket = cloud_from_json(field(obj, "pocket"));
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<LigandPocketPair> load_pairs(const std::filesystem::path& path) {
  return parse_pairs(read_text(path), path.string());
}

std::string format_pairs(const std::vector<LigandPocketPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json lig;
    if (p.ligand_conformers.size() == 1) {
      lig = cloud_to_json(p.ligand_conformers[0]);
    } else {
      lig = json::array();
      for (const auto& c : p.ligand_conformers) lig.push_back(cloud_to_json(c));
    }
    json obj{{"ligand_id", p.ligand_id},
             {"pocket_id", p.pocket_id},
             {"affinity_value", p.affinity_value},
             {"affinity_type", affinity_type_name(p.affinity_type)},
             {"ligand", std::move(lig)},
             {"pocket", cloud_to_json(p.pocket)}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_pairs(const std::vector<LigandPocketPair>& pairs, const std::filesystem::path& path) {
  io::write_text(path, format_pairs(pairs));
}

}  // namespace molspace::geom
