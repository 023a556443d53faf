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
#include <string>
#include <vector>

#include "molspace/geom.hpp"
#include "molspace/rng.hpp"

namespace molspace::synth {

// ---------------------------------------------------------------------------
// Planted-cluster ligand/pocket corpus
//
// Each latent cluster owns one pocket template and a few ligand templates.
// Samples are jittered copies under a random rigid motion, so a model can only
// match pockets to ligands by learning the cluster structure.

struct PlantedConfig {
  int clusters = 16;
  int pocket_atoms = 16;
  int ligand_min_atoms = 8;
  int ligand_max_atoms = 10;
  int ligand_templates = 2;
  /// Per-coordinate Gaussian jitter in angstrom.
  double jitter = 0.25;
  int conformers = 2;
  std::uint64_t seed = 0;
};

class PlantedClusters {
 public:
  explicit PlantedClusters(const PlantedConfig& config);

  int clusters() const { return config_.clusters; }
  const PlantedConfig& config() const { return config_; }

  geom::AtomicPointCloud sample_pocket(int cluster, Rng& rng) const;
  /// Returns the cloud and the RMS jitter that was applied.
  geom::AtomicPointCloud sample_ligand(int cluster, Rng& rng, double* rms_jitter = nullptr) const;

  /// Pair `index` belongs to cluster index % clusters. Affinity is
  /// 9 - 2 * (RMS jitter of the first conformer), reported as Kd.
  std::vector<geom::LigandPocketPair> corpus(std::size_t n_pairs, Rng& rng) const;

 private:
  struct Template {
    std::vector<int> z;
    std::vector<geom::Vec3> p;
  };
  geom::AtomicPointCloud jittered(const Template& t, Rng& rng, double* rms) const;

  PlantedConfig config_;
  std::vector<Template> pockets_;
  std::vector<std::vector<Template>> ligands_;
};

// ---------------------------------------------------------------------------
// Steering corpus: two SMILES populations that differ in one visible trait.

/// Random acyclic molecules over C, N, O with single bonds and C=O branches.
std::string random_acyclic_smiles(Rng& rng);
/// Benzene with one or two acyclic substituents.
std::string random_benzene_smiles(Rng& rng);

/// Crude 3D placement of a SMILES heavy-atom graph: a breadth-first walk
/// with 1.5 angstrom steps in random directions that avoid existing atoms.
/// Deterministic per seed. Explicit hydrogens are dropped.
geom::AtomicPointCloud embed_smiles(const std::string& smiles, std::uint64_t seed);

/// `per_label` acyclic records labelled `label_a` followed by `per_label`
/// benzene records labelled `label_b`, each with a placed cloud.
std::vector<geom::ConformerRecord> steering_corpus(std::size_t per_label, std::uint64_t seed,
                                                   const std::string& label_a,
                                                   const std::string& label_b);

}  // namespace molspace::synth
