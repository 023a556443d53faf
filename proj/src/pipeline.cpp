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

#include "molspace/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/chem.hpp"
#include "molspace/error.hpp"
#include "molspace/params.hpp"

namespace molspace::pipeline {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PlantedExperimentConfig default_planted_config() {
  PlantedExperimentConfig c;
  c.corpus.seed = 1;
  c.encoder.layers = 2;
  c.encoder.heads = 4;
  c.encoder.dim = 32;
  c.encoder.channels = 4;
  c.encoder.proj_dim = 64;
  c.train.steps = 200;
  c.train.batch = 16;
  c.train.lr = 1e-3;
  c.train.seed = 5;
  return c;
}

double planted_top1(const ParamStore& joint, const set::SetConfig& encoder,
                    const synth::PlantedClusters& generator, int rounds, std::uint64_t seed) {
  if (rounds < 1) throw ArgumentError("planted_top1: rounds must be >= 1");
  Rng rng(seed);
  double total = 0.0;
  for (int r = 0; r < rounds; ++r) {
    contrastive::Matrix pockets, ligands;
    for (int k = 0; k < generator.clusters(); ++k) {
      pockets.push_back(set::encode(joint, encoder, generator.sample_pocket(k, rng), "pocket.").x);
      ligands.push_back(set::encode(joint, encoder, generator.sample_ligand(k, rng), "ligand.").x);
    }
    total += contrastive::top1_accuracy(pockets, ligands);
  }
  return total / rounds;
}

PlantedReport run_planted_experiment(const PlantedExperimentConfig& config,
                                     const std::function<void(const contrastive::HistoryRow&)>& on_step) {
  config.encoder.validate();
  const synth::PlantedClusters generator(config.corpus);
  Rng rng(config.seed);
  const auto pairs = generator.corpus(config.pairs, rng);
  const ParamStore ligand = set::init_params(config.encoder, config.seed + 2);
  const ParamStore pocket = set::init_params(config.encoder, config.seed + 3);
  const std::uint64_t eval_seed = config.seed ^ 0x5eed5eedULL;

  PlantedReport report;
  report.initial_top1 = planted_top1(contrastive::joint_params(ligand, pocket, config.train.initial_tau),
                                     config.encoder, generator, config.eval_rounds, eval_seed);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = contrastive::train_contrastive(pairs, ligand, config.encoder, pocket, config.encoder,
                                               config.train, on_step);
  report.train_seconds = seconds_since(t0);
  report.final_top1 = planted_top1(result.params, config.encoder, generator, config.eval_rounds, eval_seed);
  report.history = std::move(result.history);
  report.params = std::move(result.params);
  return report;
}

SteeringConfig default_steering_config() {
  SteeringConfig c;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.dim = 32;
  c.encoder.channels = 4;
  c.encoder.proj_dim = 64;
  c.decoder.layers = 2;
  c.decoder.heads = 4;
  c.decoder.hidden = 64;
  c.decoder.max_positions = 48;
  c.decoder.cond_dim = 64;
  c.train.steps = 1500;
  c.train.batch = 16;
  c.train.lr = 2e-3;
  c.train.seed = 3;
  return c;
}

SteeringReport run_steering_ablation(const SteeringConfig& config, const std::function<void(int, double)>& on_step) {
  if (config.label_a == config.label_b) throw ArgumentError("steering labels must differ");
  if (config.conditions < 2) throw ArgumentError("steering needs at least 2 conditions");
  if (config.decoder.cond_dim != config.encoder.proj_dim)
    throw ShapeError("decoder cond_dim must equal the encoder projection width");
  config.encoder.validate();
  config.decoder.validate();

  const auto corpus = synth::steering_corpus(config.per_label, config.seed, config.label_a, config.label_b);
  std::vector<std::string> smiles;
  for (const auto& r : corpus) smiles.push_back(r.smiles);
  SteeringReport report;
  report.vocab = mclm::Vocab({config.label_a, config.label_b}, smiles);
  const ParamStore encoder = set::init_params(config.encoder, config.seed + 7);

  const auto t0 = std::chrono::steady_clock::now();
  auto trained = mclm::train_mclm(corpus, encoder, config.encoder, "", report.vocab, config.decoder, config.train,
                                  on_step);
  report.train_seconds = seconds_since(t0);
  report.losses = std::move(trained.losses);
  report.skipped = trained.skipped;
  report.decoder_params = std::move(trained.params);

  std::vector<chem::Fingerprint> catalog;
  for (const auto& r : corpus)
    if (r.dataset == config.label_b) catalog.push_back(chem::morgan_fingerprint(chem::parse_smiles(r.smiles)));

  // Held-out conditions: alternate between the two populations.
  const std::size_t half = (config.conditions + 1) / 2;
  const auto held = synth::steering_corpus(half, config.seed + 1000, config.label_a, config.label_b);
  std::vector<const geom::ConformerRecord*> conditions;
  for (std::size_t i = 0; conditions.size() < config.conditions; ++i) {
    conditions.push_back(&held[i / 2 + (i % 2 ? half : 0)]);
  }

  for (const std::string& label : {config.label_a, config.label_b}) {
    TokenStats stats;
    stats.label = label;
    std::vector<chem::Fingerprint> generated;
    std::size_t valid = 0, aromatic = 0;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      mclm::GenRequest req;
      req.x = mclm::normalize_condition(set::encode(encoder, config.encoder, conditions[i]->cloud).x);
      req.dataset = label;
      req.temperature = config.temperature;
      req.max_len = config.max_len;
      req.seed = config.seed * 1000003ULL + i;
      SteeringSample sample;
      sample.label = label;
      sample.condition_id = conditions[i]->id;
      sample.seed = req.seed;
      sample.smiles = mclm::generate(report.decoder_params, config.decoder, report.vocab, req).smiles;
      sample.nn_similarity = std::nan("");
      try {
        const auto fp = chem::morgan_fingerprint(chem::parse_smiles(sample.smiles));
        sample.valid = !sample.smiles.empty();
        if (sample.valid) {
          generated.push_back(fp);
          sample.nn_similarity = retrieval::nearest_neighbor_similarity({fp}, catalog).values[0];
        }
      } catch (const ParseError&) {
      }
      for (const auto& t : chem::tokenize_smiles(sample.smiles)) sample.aromatic |= chem::is_aromatic_token(t);
      valid += sample.valid;
      aromatic += sample.aromatic;
      report.samples.push_back(std::move(sample));
    }
    stats.samples = conditions.size();
    stats.validity = static_cast<double>(valid) / static_cast<double>(stats.samples);
    stats.aromatic_fraction = static_cast<double>(aromatic) / static_cast<double>(stats.samples);
    stats.nn = retrieval::nearest_neighbor_similarity(generated, catalog);
    report.tokens.push_back(std::move(stats));
  }
  std::size_t valid = 0;
  for (const auto& s : report.samples) valid += s.valid;
  report.overall_validity = static_cast<double>(valid) / static_cast<double>(report.samples.size());
  return report;
}

std::string steering_summary_csv(const SteeringReport& report) {
  std::string out = "label,samples,validity,aromatic_fraction,nn_mean,nn_median,nn_exact_fraction\n";
  for (const auto& t : report.tokens)
    out += t.label + "," + std::to_string(t.samples) + "," + fmt(t.validity) + "," + fmt(t.aromatic_fraction) + "," +
           fmt(t.nn.mean) + "," + fmt(t.nn.median) + "," + fmt(t.nn.exact_fraction) + "\n";
  return out;
}

std::string steering_samples_csv(const SteeringReport& report) {
  std::string out = "label,condition,seed,smiles,valid,aromatic,nn_similarity\n";
  for (const auto& s : report.samples)
    out += s.label + "," + s.condition_id + "," + std::to_string(s.seed) + "," + s.smiles + "," +
           (s.valid ? "1" : "0") + "," + (s.aromatic ? "1" : "0") + "," +
           (s.valid ? fmt(s.nn_similarity) : std::string()) + "\n";
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& output) {
  return output.string() + ".manifest.json";
}

std::string format_manifest(const Manifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = nlohmann::ordered_json::parse(m.config_json.empty() ? "{}" : m.config_json);
  j["config_hash"] = "fnv1a64:" + hex64(fnv1a64(m.config_json));
  j["seed"] = m.seed;
  j["outputs"] = m.outputs;
  j["versions"] = {{"molspace", kVersion}, {"checkpoint_format", 1}, {"shard_format", 1}};
  return j.dump(2) + "\n";
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& output) {
  io::write_text(manifest_path(output), format_manifest(manifest));
}

}  // namespace molspace::pipeline
