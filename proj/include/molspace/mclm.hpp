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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "molspace/autodiff.hpp"
#include "molspace/geom.hpp"
#include "molspace/params.hpp"
#include "molspace/set_encoder.hpp"

namespace molspace::mclm {

// ---------------------------------------------------------------------------
// Vocabulary
//
// Layout: 0 PAD, 1 BOS, 2 EOS, then one token per dataset label (declaration
// order), then the base SMILES token table, then any extra SMILES tokens seen
// in the corpus (bracket atoms, %nn labels) in sorted order.

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;

class Vocab {
 public:
  Vocab() = default;
  /// `smiles_corpus` contributes tokens beyond the base table; strings that
  /// fail to tokenize are ignored here (training reports them).
  Vocab(const std::vector<std::string>& dataset_labels,
        const std::vector<std::string>& smiles_corpus = {});

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  /// -1 if unknown.
  int id_of(const std::string& token) const;
  /// Throws ArgumentError for an undeclared label.
  int dataset_id(const std::string& label) const;
  const std::vector<std::string>& datasets() const { return datasets_; }
  bool is_dataset(int id) const;
  bool is_smiles(int id) const;

  /// SMILES -> token ids (no EOS). Throws ParseError or ArgumentError.
  std::vector<int> encode(const std::string& smiles) const;
  /// Concatenates SMILES tokens; specials and dataset tokens are skipped.
  std::string decode(std::span<const int> ids) const;

  std::string to_json() const;
  static Vocab from_json(const std::string& text, const std::string& origin);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const {
    return tokens_ == other.tokens_ && datasets_ == other.datasets_;
  }

 private:
  void rebuild_index();
  std::vector<std::string> tokens_;
  std::vector<std::string> datasets_;
  std::map<std::string, int> index_;
};

/// Display token for a dataset label, e.g. "[ds:enamine]".
std::string dataset_token(const std::string& label);
/// Base SMILES token table shared by every vocabulary.
const std::vector<std::string>& base_smiles_tokens();

// ---------------------------------------------------------------------------
// Decoder

struct MclmConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 256;
  /// Longest input sequence, conditioning positions included.
  int max_positions = 96;
  /// Width of the conditioning embedding x.
  int cond_dim = 256;

  void validate() const;
  bool operator==(const MclmConfig&) const = default;
};

std::string config_to_json(const MclmConfig& config);
MclmConfig config_from_json(const std::string& text, const std::string& origin);

ParamStore init_params(const MclmConfig& config, std::size_t vocab_size, std::uint64_t seed);

/// H = [embed(ds), x W_P + b_P, embed(s_1), ..., embed(s_n)]: [n + 2, hidden].
/// `x` is a [1, cond_dim] var.
ad::Var assemble_input(const BoundParams& params, const MclmConfig& config, const Vocab& vocab,
                       const std::string& dataset_label, ad::Var x, std::span<const int> tokens);

/// Causal decoder over an assembled sequence: returns logits [T, V].
ad::Var decoder_logits(const BoundParams& params, const MclmConfig& config, ad::Var h);

struct Example {
  std::string dataset;
  std::vector<double> x;
  /// SMILES token ids ending with EOS.
  std::vector<int> tokens;
};

/// Summed NLL over every target token of every example, divided by the
/// target count. The two conditioning positions are never targets.
ad::Var nll_loss_var(const BoundParams& params, const MclmConfig& config, const Vocab& vocab,
                     const std::vector<Example>& batch);
double nll_loss(const ParamStore& params, const MclmConfig& config, const Vocab& vocab,
                const std::vector<Example>& batch);

/// L2-normalised copy of a conditioning embedding (zero stays zero).
std::vector<double> normalize_condition(const std::vector<double>& x);

struct TrainConfig {
  int steps = 500;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<double> losses;
  /// Records whose SMILES could not be tokenized into the vocabulary.
  std::size_t skipped = 0;
};

/// Embeddings are computed once with the frozen encoder (its projection x,
/// L2-normalised); then Adam over nll_loss.
TrainResult train_mclm(const std::vector<geom::ConformerRecord>& records,
                       const ParamStore& encoder_params, const set::SetConfig& encoder_config,
                       const std::string& encoder_prefix, const Vocab& vocab,
                       const MclmConfig& config, const TrainConfig& train,
                       const std::function<void(int, double)>& on_step = {});

/// Same, from precomputed examples.
TrainResult train_on_examples(const std::vector<Example>& examples, const Vocab& vocab,
                              const MclmConfig& config, const TrainConfig& train,
                              const std::function<void(int, double)>& on_step = {});

struct GenRequest {
  std::vector<double> x;
  std::string dataset;
  double temperature = 1.0;
  int max_len = 64;
  std::uint64_t seed = 0;
};

struct GenResult {
  std::string smiles;
  /// Sampled ids, EOS included when it was produced.
  std::vector<int> trace;
  /// Masked next-token logits per step (only when requested).
  std::vector<std::vector<double>> step_logits;
};

/// Autoregressive sampling. PAD, BOS and dataset tokens are never sampled.
/// Temperature 0 is argmax with ties to the lowest id.
GenResult generate(const ParamStore& params, const MclmConfig& config, const Vocab& vocab,
                   const GenRequest& request, bool keep_logits = false);

struct GenerationRecord {
  std::string id;
  std::string smiles;
  std::string dataset_token;
  std::uint64_t seed = 0;
  bool valid = false;
};

std::string format_generation_jsonl(const std::vector<GenerationRecord>& records);

}  // namespace molspace::mclm
