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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "molspace/autodiff.hpp"
#include "molspace/geom.hpp"
#include "molspace/params.hpp"

namespace molspace::set {

/// Atom-type vocabulary: atomic numbers 1..118 plus the reserved mask id 0.
inline constexpr int kAtomTypes = 119;
inline constexpr int kMaskId = 0;

struct SetConfig {
  int layers = 4;
  int heads = 4;
  int dim = 128;
  int channels = 8;
  int proj_dim = 256;
  int max_atoms = 256;
  /// "ligand" or "pocket". Informational; both share one architecture.
  std::string modality = "ligand";

  int head_dim() const { return dim / heads; }
  /// Throws ArgumentError on an inconsistent configuration.
  void validate() const;
  bool operator==(const SetConfig&) const = default;
};

std::string config_to_json(const SetConfig& config);
SetConfig config_from_json(const std::string& text, const std::string& origin);
void save_config(const SetConfig& config, const std::filesystem::path& path);
SetConfig load_config(const std::filesystem::path& path);
/// `<checkpoint>.config.json`
std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

/// Fresh parameters. Names are prefixed with `prefix` (e.g. "ligand.").
ParamStore init_params(const SetConfig& config, std::uint64_t seed, const std::string& prefix = "");

/// Handles produced by one forward pass on a tape.
struct EncoderVars {
  ad::Var scalars;  // [N+1, d]; row 0 is the virtual atom
  ad::Var vectors;  // [N+1, 3c], column axis*c + channel
  ad::Var h;        // [1, d]
  ad::Var x;        // [1, d']
  /// Per layer, per head attention matrices [N+1, N+1] (only when requested).
  std::vector<std::vector<ad::Tensor>> attention;
};

/// Forward pass on `params` (bound to a tape). `z` overrides the cloud's
/// atomic numbers (the MLM path feeds corrupted types; 0 is the mask id).
EncoderVars encode_vars(const BoundParams& params, const SetConfig& config,
                        const geom::AtomicPointCloud& cloud, const std::vector<int>& z,
                        const std::string& prefix = "", bool keep_attention = false);

/// Plain-value encoder result.
struct EncoderOutput {
  std::vector<double> h;
  std::vector<double> x;
  ad::Tensor scalars;
  ad::Tensor vectors;
  std::vector<std::vector<ad::Tensor>> attention;
};

EncoderOutput encode(const ParamStore& params, const SetConfig& config,
                     const geom::AtomicPointCloud& cloud, const std::string& prefix = "",
                     bool keep_attention = false);

/// Projection head g applied to a [1, d] (or [n, d]) scalar block.
ad::Var project_vars(const BoundParams& params, ad::Var h, const std::string& prefix = "");
std::vector<double> project(const ParamStore& params, const std::vector<double>& h,
                            const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Masked-atom pretraining

enum class Corruption { kMasked, kRandom, kUnchanged };

struct MlmSample {
  geom::AtomicPointCloud cloud;
  std::vector<int> selected;            // ascending atom indices
  std::vector<Corruption> kinds;        // parallel to `selected`
  std::vector<int> targets;             // original atomic numbers, parallel to `selected`
  std::vector<int> corrupted_z;         // encoder input, one per atom
};

/// Number of atoms selected for prediction: round(0.2 N), at least 1.
std::size_t mlm_selection_size(std::size_t n_atoms);
/// (masked, random, unchanged) counts by largest-remainder rounding of 80/10/10.
std::array<std::size_t, 3> mlm_split(std::size_t selected);

/// `alphabet` is the set of atom types random replacements draw from; when
/// empty the cloud's own types are used.
MlmSample mlm_corrupt(const geom::AtomicPointCloud& cloud, std::uint64_t seed,
                      const std::vector<int>& alphabet = {});

/// MLM head logits [N, 119] for per-atom scalar rows.
ad::Var mlm_logits(const BoundParams& params, ad::Var atom_scalars, const std::string& prefix = "");
/// Mean cross entropy over the selected atoms.
ad::Var mlm_loss_var(const BoundParams& params, const SetConfig& config, const MlmSample& sample,
                     const std::string& prefix = "");
double mlm_loss(const ParamStore& params, const SetConfig& config, const MlmSample& sample,
                const std::string& prefix = "");

struct PretrainConfig {
  int steps = 500;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  ParamStore params;
  std::vector<double> losses;  // one per step, before the update
};

/// Adam over the MLM loss. `on_step(step, loss)` is called after every step.
PretrainResult pretrain_encoder(const std::vector<geom::AtomicPointCloud>& corpus,
                                const SetConfig& config, const PretrainConfig& train,
                                const std::function<void(int, double)>& on_step = {});

}  // namespace molspace::set
