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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "molspace/autodiff.hpp"
#include "molspace/geom.hpp"
#include "molspace/params.hpp"
#include "molspace/set_encoder.hpp"

namespace molspace::contrastive {

inline constexpr double kInitialTemperature = 0.07;

/// a.b / (|a| |b|). Throws ShapeError on a length mismatch and ArgumentError
/// if either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// C_i = { j : pocket_ids[j] == pocket_ids[i] }, ascending.
std::vector<std::vector<std::size_t>> collision_sets(const std::vector<std::string>& pocket_ids);

/// Pocket-direction positive for every i: argmax of affinity over C_i, ties to
/// the lowest index.
std::vector<int> pocket_positives(const std::vector<std::string>& pocket_ids,
                                  const std::vector<double>& affinities);

struct LossVars {
  ad::Var total;           // [1]
  ad::Var pocket_losses;   // [N], L^p_i
  ad::Var ligand_losses;   // [N], L^l_i
};

/// CF-InfoNCE on a tape. `ligand` and `pocket` are [N, d'] embedding rows,
/// `log_tau` a 1-element temperature logarithm. Pocket row i is contrasted
/// against all ligands with target `pocket_targets[i]`; ligand row i against
/// all pockets with target i. total = 0.5 * sum_i (L^p_i + L^l_i).
LossVars cf_infonce_vars(ad::Var ligand, ad::Var pocket, ad::Var log_tau,
                         std::span<const int> pocket_targets);

struct LossValues {
  double total = 0.0;
  std::vector<double> pocket_losses;
  std::vector<double> ligand_losses;
};

using Matrix = std::vector<std::vector<double>>;

/// Collision-aware loss with temperature `tau` (> 0).
LossValues cf_infonce(const Matrix& ligand, const Matrix& pocket,
                      const std::vector<std::string>& pocket_ids,
                      const std::vector<double>& affinities, double tau);

/// Plain symmetric InfoNCE: diagonal positives in both directions.
LossValues symmetric_infonce(const Matrix& ligand, const Matrix& pocket, double tau);

/// Fraction of rows i whose highest-cosine candidate (ties to the lowest
/// index) is candidate i.
double top1_accuracy(const Matrix& queries, const Matrix& candidates);

struct ContrastiveConfig {
  int steps = 300;
  int batch = 16;
  double lr = 1e-3;
  double initial_tau = kInitialTemperature;
  std::uint64_t seed = 0;
};

struct HistoryRow {
  int step;
  double loss;
  double tau;
};

struct ContrastiveResult {
  /// "ligand.*", "pocket.*" and "log_tau".
  ParamStore params;
  std::vector<HistoryRow> history;
  double tau() const;
};

/// Joint parameter store for training, built from two encoders' parameters
/// (unprefixed) and an initial temperature.
ParamStore joint_params(const ParamStore& ligand, const ParamStore& pocket, double tau);

/// Joint Adam over both encoders and the temperature. Every step draws a
/// batch of distinct pairs and, per pair, one ligand conformer uniformly at
/// random. Throws ArgumentError when the corpus has fewer than two pockets.
ContrastiveResult train_contrastive(const std::vector<geom::LigandPocketPair>& pairs,
                                    const ParamStore& ligand_params, const set::SetConfig& ligand_cfg,
                                    const ParamStore& pocket_params, const set::SetConfig& pocket_cfg,
                                    const ContrastiveConfig& config,
                                    const std::function<void(const HistoryRow&)>& on_step = {});

/// CSV with header "step,loss,tau".
void save_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

}  // namespace molspace::contrastive
