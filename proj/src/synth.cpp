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

#include "molspace/synth.hpp"

#include <cmath>

#include "molspace/chem.hpp"
#include "molspace/error.hpp"

namespace molspace::synth {

namespace {

constexpr int kTypes[] = {6, 7, 8, 16};

/// Atom types drawn from a cluster-specific categorical distribution.
std::vector<int> draw_types(std::size_t n, Rng& rng) {
  double w[4];
  double total = 0.0;
  for (double& x : w) total += (x = -std::log(1.0 - rng.uniform()));
  std::vector<int> z;
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    int k = 0;
    while (k < 3 && u >= w[k]) u -= w[k++];
    z.push_back(kTypes[k]);
  }
  return z;
}

geom::Vec3 random_in_ball(Rng& rng, double radius) {
  while (true) {
    geom::Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (r2 <= 1.0) return {v[0] * radius, v[1] * radius, v[2] * radius};
  }
}

}  // namespace

PlantedClusters::PlantedClusters(const PlantedConfig& config) : config_(config) {
  if (config.clusters < 1 || config.pocket_atoms < 1 || config.ligand_min_atoms < 1 ||
      config.ligand_max_atoms < config.ligand_min_atoms || config.ligand_templates < 1 ||
      config.conformers < 1 || config.jitter < 0.0)
    throw ArgumentError("planted corpus: invalid configuration");
  Rng rng(config.seed);
  for (int k = 0; k < config.clusters; ++k) {
    Template pocket;
    pocket.z = draw_types(static_cast<std::size_t>(config.pocket_atoms), rng);
    // Pocket atoms on a rough shell around the binding site.
    for (int i = 0; i < config.pocket_atoms; ++i) {
      geom::Vec3 d = random_in_ball(rng, 1.0);
      const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-9;
      const double r = rng.uniform(4.0, 6.5);
      pocket.p.push_back({d[0] / n * r, d[1] / n * r, d[2] / n * r});
    }
    pockets_.push_back(pocket);
    ligands_.emplace_back();
    for (int t = 0; t < config.ligand_templates; ++t) {
      Template lig;
      const auto n = static_cast<std::size_t>(
          config.ligand_min_atoms +
          static_cast<int>(rng.below(static_cast<std::uint64_t>(config.ligand_max_atoms - config.ligand_min_atoms + 1))));
      lig.z = draw_types(n, rng);
      for (std::size_t i = 0; i < n; ++i) lig.p.push_back(random_in_ball(rng, 3.0));
      ligands_.back().push_back(lig);
    }
  }
}

geom::AtomicPointCloud PlantedClusters::jittered(const Template& t, Rng& rng, double* rms) const {
  const geom::RigidMotion motion = geom::random_motion(rng, false, 20.0);
  std::vector<geom::Vec3> p;
  double sq = 0.0;
  for (const auto& x : t.p) {
    geom::Vec3 y = x;
    for (double& c : y) {
      const double e = rng.normal(0.0, config_.jitter);
      sq += e * e;
      c += e;
    }
    p.push_back(motion.apply(y));
  }
  if (rms) *rms = std::sqrt(sq / static_cast<double>(3 * t.p.size()));
  return geom::AtomicPointCloud(t.z, p);
}

geom::AtomicPointCloud PlantedClusters::sample_pocket(int cluster, Rng& rng) const {
  return jittered(pockets_.at(static_cast<std::size_t>(cluster)), rng, nullptr);
}

geom::AtomicPointCloud PlantedClusters::sample_ligand(int cluster, Rng& rng, double* rms_jitter) const {
  const auto& templates = ligands_.at(static_cast<std::size_t>(cluster));
  return jittered(templates[rng.below(templates.size())], rng, rms_jitter);
}

std::vector<geom::LigandPocketPair> PlantedClusters::corpus(std::size_t n_pairs, Rng& rng) const {
  std::vector<geom::LigandPocketPair> out;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(config_.clusters));
    geom::LigandPocketPair pair;
    pair.ligand_id = "L" + std::to_string(i);
    pair.pocket_id = "P" + std::to_string(k);
    const auto& templates = ligands_[static_cast<std::size_t>(k)];
    const Template& t = templates[rng.below(templates.size())];
    double rms = 0.0;
    for (int c = 0; c < config_.conformers; ++c)
      pair.ligand_conformers.push_back(jittered(t, rng, c == 0 ? &rms : nullptr));
    pair.pocket = sample_pocket(k, rng);
    pair.affinity_value = 9.0 - 2.0 * rms;
    pair.affinity_type = geom::AffinityType::kKd;
    out.push_back(std::move(pair));
  }
  return out;
}

namespace {

/// Appends an acyclic chain of `atoms` heavy atoms. Only carbons take
/// branches, and only one each, so no atom exceeds its valence.
void append_chain(std::string& out, int atoms, Rng& rng) {
  static const char* const kAtoms[] = {"C", "C", "C", "C", "N", "O"};
  static const char* const kBranches[] = {"(C)", "(=O)", "(O)", "(N)", "(CC)"};
  for (int i = 0; i < atoms; ++i) {
    const std::string atom = kAtoms[rng.below(6)];
    out += atom;
    if (atom == "C" && i > 0 && i + 1 < atoms && rng.below(3) == 0) out += kBranches[rng.below(5)];
  }
}

}  // namespace

std::string random_acyclic_smiles(Rng& rng) {
  while (true) {
    std::string s;
    append_chain(s, 3 + static_cast<int>(rng.below(6)), rng);
    try {
      chem::parse_smiles(s);
      return s;
    } catch (const ParseError&) {
    }
  }
}

std::string random_benzene_smiles(Rng& rng) {
  static const char* const kPrefix[] = {"", "C", "CC", "OC", "NC", "CCO", "CO"};
  static const char* const kSubstituent[] = {"C", "O", "N", "CC", "CO", "C(=O)O", "OC", "F", "Cl"};
  while (true) {
    std::string s = kPrefix[rng.below(7)];
    s += "c1cc";
    if (rng.below(2) == 0) {
      s += "c(";
      s += kSubstituent[rng.below(9)];
      s += ")";
    } else {
      s += "c";
    }
    s += "cc1";
    if (rng.below(3) == 0) s += kSubstituent[rng.below(9)];
    try {
      chem::parse_smiles(s);
      return s;
    } catch (const ParseError&) {
    }
  }
}

geom::AtomicPointCloud embed_smiles(const std::string& smiles, std::uint64_t seed) {
  const chem::MolGraph g = chem::parse_smiles(smiles);
  const auto adj = g.adjacency();
  const std::size_t n = g.atoms.size();
  Rng rng(seed);
  std::vector<geom::Vec3> pos(n, {0, 0, 0});
  std::vector<bool> placed(n, false);
  std::vector<std::size_t> queue = {0};
  placed[0] = true;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t u = queue[head];
    for (const auto& [v_raw, bond] : adj[u]) {
      const auto v = static_cast<std::size_t>(v_raw);
      if (placed[v]) continue;
      geom::Vec3 best = pos[u];
      double best_clearance = -1.0;
      for (int attempt = 0; attempt < 24; ++attempt) {
        geom::Vec3 d = random_in_ball(rng, 1.0);
        const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (len < 1e-6) continue;
        const geom::Vec3 cand{pos[u][0] + 1.5 * d[0] / len, pos[u][1] + 1.5 * d[1] / len,
                              pos[u][2] + 1.5 * d[2] / len};
        double clearance = INFINITY;
        for (std::size_t w = 0; w < n; ++w)
          if (placed[w] && w != u) clearance = std::min(clearance, geom::distance(cand, pos[w]));
        if (clearance > best_clearance) {
          best_clearance = clearance;
          best = cand;
        }
        if (clearance > 2.2) break;
      }
      pos[v] = best;
      placed[v] = true;
      queue.push_back(v);
    }
  }
  std::vector<int> z;
  std::vector<geom::Vec3> p;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.atoms[i].atomic_number == 1) continue;
    z.push_back(g.atoms[i].atomic_number);
    p.push_back(pos[i]);
  }
  return geom::AtomicPointCloud(z, p);
}

std::vector<geom::ConformerRecord> steering_corpus(std::size_t per_label, std::uint64_t seed,
                                                   const std::string& label_a,
                                                   const std::string& label_b) {
  Rng rng(seed);
  std::vector<geom::ConformerRecord> out;
  for (int which = 0; which < 2; ++which) {
    for (std::size_t i = 0; i < per_label; ++i) {
      geom::ConformerRecord rec;
      rec.smiles = which == 0 ? random_acyclic_smiles(rng) : random_benzene_smiles(rng);
      rec.dataset = which == 0 ? label_a : label_b;
      rec.id = rec.dataset + "_" + std::to_string(i);
      rec.cloud = embed_smiles(rec.smiles, rng.next_u64());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace molspace::synth
