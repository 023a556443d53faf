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
#include <string>
#include <vector>

#include "molspace/contrastive.hpp"
#include "molspace/mclm.hpp"
#include "molspace/retrieval.hpp"
#include "molspace/set_encoder.hpp"
#include "molspace/synth.hpp"

namespace molspace::pipeline {

inline constexpr const char* kVersion = "0.1.0";

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Planted-cluster retrieval experiment

struct PlantedExperimentConfig {
  synth::PlantedConfig corpus;
  std::size_t pairs = 512;
  set::SetConfig encoder;
  contrastive::ContrastiveConfig train;
  /// Held-out evaluation: `eval_rounds` fresh draws of one pocket and one
  /// ligand per cluster; pocket -> ligand top-1 averaged over rounds.
  int eval_rounds = 10;
  std::uint64_t seed = 1;
};

/// Small encoder (2 layers, 4 heads, d=32, 4 channels, d'=64) and 200 steps.
PlantedExperimentConfig default_planted_config();

struct PlantedReport {
  double initial_top1 = 0.0;
  double final_top1 = 0.0;
  std::vector<contrastive::HistoryRow> history;
  ParamStore params;
  double train_seconds = 0.0;
};

double planted_top1(const ParamStore& joint, const set::SetConfig& encoder,
                    const synth::PlantedClusters& generator, int rounds, std::uint64_t seed);

PlantedReport run_planted_experiment(const PlantedExperimentConfig& config,
                                     const std::function<void(const contrastive::HistoryRow&)>& on_step = {});

// ---------------------------------------------------------------------------
// Dataset-token steering ablation
//
// Two corpora (acyclic under label A, benzene derivatives under label B) train
// one decoder conditioned on a frozen encoder. The same held-out conditions
// are then decoded under each token. Nearest-neighbour similarity is measured
// against the label-B training molecules.

struct SteeringConfig {
  std::size_t per_label = 200;
  std::string label_a = "A";
  std::string label_b = "B";
  set::SetConfig encoder;
  mclm::MclmConfig decoder;
  mclm::TrainConfig train;
  /// Held-out molecules (half from each corpus) used as conditions.
  std::size_t conditions = 50;
  double temperature = 0.7;
  int max_len = 40;
  std::uint64_t seed = 1;
};

SteeringConfig default_steering_config();

struct SteeringSample {
  std::string label;
  std::string condition_id;
  std::string smiles;
  std::uint64_t seed = 0;
  bool valid = false;
  bool aromatic = false;
  /// Nearest-neighbour Tanimoto to the catalog; NaN when invalid.
  double nn_similarity = 0.0;
};

struct TokenStats {
  std::string label;
  std::size_t samples = 0;
  double validity = 0.0;
  /// Fraction of samples containing an aromatic token.
  double aromatic_fraction = 0.0;
  retrieval::NeighborSummary nn;  // over valid samples
};

struct SteeringReport {
  std::vector<TokenStats> tokens;  // label A first
  std::vector<SteeringSample> samples;
  std::vector<double> losses;
  std::size_t skipped = 0;
  double train_seconds = 0.0;
  double overall_validity = 0.0;
  ParamStore decoder_params;
  mclm::Vocab vocab;
};

SteeringReport run_steering_ablation(const SteeringConfig& config,
                                     const std::function<void(int, double)>& on_step = {});

/// label,samples,validity,aromatic_fraction,nn_mean,nn_median,nn_exact_fraction
std::string steering_summary_csv(const SteeringReport& report);
/// label,condition,seed,smiles,valid,aromatic,nn_similarity
std::string steering_samples_csv(const SteeringReport& report);

// ---------------------------------------------------------------------------
// Run manifests

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_json;  // effective configuration, compact JSON
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
};

/// `<output>.manifest.json`
std::filesystem::path manifest_path(const std::filesystem::path& output);
std::string format_manifest(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& output);

}  // namespace molspace::pipeline
