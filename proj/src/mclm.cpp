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

#include "molspace/mclm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "json.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/chem.hpp"
#include "molspace/error.hpp"

namespace molspace::mclm {

using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>"};

}  // namespace

std::string dataset_token(const std::string& label) { return "[ds:" + label + "]"; }

const std::vector<std::string>& base_smiles_tokens() {
  static const std::vector<std::string> kBase = {
      "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "c", "n", "o", "s", "p", "b",
      "(", ")", "=", "#", "-", ":", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  return kBase;
}

Vocab::Vocab(const std::vector<std::string>& dataset_labels,
             const std::vector<std::string>& smiles_corpus) {
  std::set<std::string> labels;
  for (const auto& l : dataset_labels) {
    if (l.empty()) throw ArgumentError("vocab: empty dataset label");
    if (!labels.insert(l).second) throw ArgumentError("vocab: duplicate dataset label " + l);
  }
  datasets_ = dataset_labels;
  tokens_.assign(std::begin(kSpecials), std::end(kSpecials));
  for (const auto& l : datasets_) tokens_.push_back(dataset_token(l));
  const auto& base = base_smiles_tokens();
  tokens_.insert(tokens_.end(), base.begin(), base.end());
  std::set<std::string> extra;
  for (const auto& s : smiles_corpus) {
    try {
      for (auto& t : chem::tokenize_smiles(s))
        if (std::find(base.begin(), base.end(), t) == base.end()) extra.insert(t);
    } catch (const ParseError&) {
    }
  }
  tokens_.insert(tokens_.end(), extra.begin(), extra.end());
  rebuild_index();
}

void Vocab::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ArgumentError("vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

int Vocab::dataset_id(const std::string& label) const {
  for (std::size_t i = 0; i < datasets_.size(); ++i)
    if (datasets_[i] == label) return static_cast<int>(3 + i);
  throw ArgumentError("unknown dataset label '" + label + "'");
}

bool Vocab::is_dataset(int id) const {
  return id >= 3 && static_cast<std::size_t>(id) < 3 + datasets_.size();
}

bool Vocab::is_smiles(int id) const {
  return static_cast<std::size_t>(id) >= 3 + datasets_.size() &&
         static_cast<std::size_t>(id) < tokens_.size();
}

std::vector<int> Vocab::encode(const std::string& smiles) const {
  std::vector<int> ids;
  for (const auto& t : chem::tokenize_smiles(smiles)) {
    const int id = id_of(t);
    if (id < 0 || !is_smiles(id)) throw ArgumentError("token '" + t + "' is not in the vocabulary");
    ids.push_back(id);
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids)
    if (is_smiles(id)) out += token(id);
  return out;
}

std::string Vocab::to_json() const {
  nlohmann::json j = {{"tokens", tokens_}, {"datasets", datasets_}};
  return j.dump(1) + "\n";
}

Vocab Vocab::from_json(const std::string& text, const std::string& origin) {
  Vocab v;
  try {
    const auto j = nlohmann::json::parse(text);
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    v.datasets_ = j.at("datasets").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin, 0, e.what());
  }
  bool ok = v.tokens_.size() >= 3 + v.datasets_.size();
  for (std::size_t i = 0; ok && i < 3; ++i) ok = v.tokens_[i] == kSpecials[i];
  for (std::size_t i = 0; ok && i < v.datasets_.size(); ++i)
    ok = v.tokens_[3 + i] == dataset_token(v.datasets_[i]);
  if (!ok) throw FormatError(origin, 0, "vocabulary layout is inconsistent");
  v.rebuild_index();
  if (v.index_.size() != v.tokens_.size()) throw FormatError(origin, 0, "duplicate vocabulary token");
  return v;
}

void Vocab::save(const std::filesystem::path& path) const { io::write_text(path, to_json()); }

Vocab Vocab::load(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return from_json(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Decoder

void MclmConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("mclm config: " + what);
  };
  require(layers >= 1, "layers must be >= 1");
  require(heads >= 1 && hidden >= 1 && hidden % heads == 0, "hidden must be a multiple of heads");
  require(max_positions >= 3, "max_positions must be >= 3");
  require(cond_dim >= 1, "cond_dim must be >= 1");
}

std::string config_to_json(const MclmConfig& c) {
  nlohmann::json j = {{"layers", c.layers},
                      {"heads", c.heads},
                      {"hidden", c.hidden},
                      {"max_positions", c.max_positions},
                      {"cond_dim", c.cond_dim}};
  return j.dump(2) + "\n";
}

MclmConfig config_from_json(const std::string& text, const std::string& origin) {
  MclmConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.hidden = j.value("hidden", c.hidden);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.cond_dim = j.value("cond_dim", c.cond_dim);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin, 0, e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string layer_name(int layer, const char* name) {
  return "l" + std::to_string(layer) + "." + name;
}

Var affine_layernorm(Var x, Var gain, Var bias) {
  return ad::add(ad::mul(ad::layernorm(x), gain), bias);
}

}  // namespace

ParamStore init_params(const MclmConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto h = static_cast<std::size_t>(config.hidden);
  const auto ff = 4 * h;
  auto glorot = [&](std::size_t in, std::size_t out) {
    return random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  ParamStore p;
  p.add("tok", random_normal({vocab_size, h}, 0.5, rng));
  p.add("pos", random_normal({static_cast<std::size_t>(config.max_positions), h}, 0.1, rng));
  p.add("wp", glorot(static_cast<std::size_t>(config.cond_dim), h));
  p.add("bp", Tensor({h}, 0.0));
  for (int l = 0; l < config.layers; ++l) {
    p.add(layer_name(l, "ln1.g"), Tensor({h}, 1.0));
    p.add(layer_name(l, "ln1.b"), Tensor({h}, 0.0));
    p.add(layer_name(l, "wq"), glorot(h, h));
    p.add(layer_name(l, "wk"), glorot(h, h));
    p.add(layer_name(l, "wv"), glorot(h, h));
    p.add(layer_name(l, "wo"), glorot(h, h));
    p.add(layer_name(l, "ln2.g"), Tensor({h}, 1.0));
    p.add(layer_name(l, "ln2.b"), Tensor({h}, 0.0));
    p.add(layer_name(l, "w1"), glorot(h, ff));
    p.add(layer_name(l, "b1"), Tensor({ff}, 0.0));
    p.add(layer_name(l, "w2"), glorot(ff, h));
    p.add(layer_name(l, "b2"), Tensor({h}, 0.0));
  }
  p.add("lnf.g", Tensor({h}, 1.0));
  p.add("lnf.b", Tensor({h}, 0.0));
  p.add("head.w", glorot(h, vocab_size));
  p.add("head.b", Tensor({vocab_size}, 0.0));
  return p;
}

Var assemble_input(const BoundParams& params, const MclmConfig& config, const Vocab& vocab,
                   const std::string& dataset_label, Var x, std::span<const int> tokens) {
  if (x.shape() != ad::Shape{1, static_cast<std::size_t>(config.cond_dim)})
    throw ShapeError("assemble_input: conditioning must be [1, " + std::to_string(config.cond_dim) +
                     "], got " + ad::shape_str(x.shape()));
  const Var table = params["tok"];
  if (table.shape()[0] != vocab.size()) throw ShapeError("assemble_input: vocabulary size mismatch");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab.size())
      throw ArgumentError("assemble_input: token id " + std::to_string(t) + " out of range");
  const int ds = vocab.dataset_id(dataset_label);
  std::vector<Var> parts = {ad::embedding_lookup(table, std::span<const int>(&ds, 1)),
                            ad::add(ad::matmul(x, params["wp"]), params["bp"])};
  if (!tokens.empty()) parts.push_back(ad::embedding_lookup(table, tokens));
  return ad::concat(parts, 0);
}

Var decoder_logits(const BoundParams& params, const MclmConfig& config, Var h) {
  const std::size_t t = h.shape()[0];
  if (t > static_cast<std::size_t>(config.max_positions))
    throw ArgumentError("decoder: sequence of " + std::to_string(t) + " exceeds " +
                        std::to_string(config.max_positions) + " positions");
  const std::size_t nh = static_cast<std::size_t>(config.heads);
  const std::size_t dh = static_cast<std::size_t>(config.hidden) / nh;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Var x = ad::add(h, ad::slice(params["pos"], 0, 0, t));
  for (int l = 0; l < config.layers; ++l) {
    auto P = [&](const char* name) { return params[layer_name(l, name)]; };
    const Var a = affine_layernorm(x, P("ln1.g"), P("ln1.b"));
    const Var q = ad::matmul(a, P("wq")), k = ad::matmul(a, P("wk")), v = ad::matmul(a, P("wv"));
    std::vector<Var> heads;
    for (std::size_t i = 0; i < nh; ++i) {
      const Var logits = ad::mul_const(
          ad::matmul(ad::slice(q, 1, i * dh, dh), ad::transpose(ad::slice(k, 1, i * dh, dh))),
          inv_sqrt_dh);
      heads.push_back(ad::matmul(ad::causal_softmax(logits), ad::slice(v, 1, i * dh, dh)));
    }
    x = ad::add(x, ad::matmul(ad::concat(heads, 1), P("wo")));
    const Var m = affine_layernorm(x, P("ln2.g"), P("ln2.b"));
    const Var ff = ad::silu(ad::add(ad::matmul(m, P("w1")), P("b1")));
    x = ad::add(x, ad::add(ad::matmul(ff, P("w2")), P("b2")));
  }
  x = affine_layernorm(x, params["lnf.g"], params["lnf.b"]);
  return ad::add(ad::matmul(x, params["head.w"]), params["head.b"]);
}

Var nll_loss_var(const BoundParams& params, const MclmConfig& config, const Vocab& vocab,
                 const std::vector<Example>& batch) {
  if (batch.empty()) throw ArgumentError("nll_loss: empty batch");
  ad::Tape& tape = params["tok"].tape();
  Var total;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = batch[b];
    if (ex.tokens.empty() || ex.tokens.back() != kEos)
      throw ArgumentError("nll_loss: sequence " + std::to_string(b) + " does not end with EOS");
    const std::size_t n = ex.tokens.size();
    const Var x = tape.constant(Tensor({1, ex.x.size()}, ex.x));
    const Var h = assemble_input(params, config, vocab, ex.dataset, x,
                                 std::span<const int>(ex.tokens.data(), n - 1));
    // Outputs at positions 1..n predict s_1..s_n; position 0 is never scored.
    const Var logits = ad::slice(decoder_logits(params, config, h), 0, 1, n);
    const Var s = ad::sum(ad::cross_entropy_rows(logits, ex.tokens));
    total = b == 0 ? s : ad::add(total, s);
    count += n;
  }
  return ad::mul_const(total, 1.0 / static_cast<double>(count));
}

double nll_loss(const ParamStore& params, const MclmConfig& config, const Vocab& vocab,
                const std::vector<Example>& batch) {
  ad::Tape tape;
  BoundParams bound(tape, params, false);
  return nll_loss_var(bound, config, vocab, batch).value().item();
}

std::vector<double> normalize_condition(const std::vector<double>& x) {
  double n = 0.0;
  for (double v : x) n += v * v;
  n = std::sqrt(n);
  std::vector<double> out = x;
  if (n > 0.0)
    for (double& v : out) v /= n;
  return out;
}

TrainResult train_on_examples(const std::vector<Example>& examples, const Vocab& vocab,
                              const MclmConfig& config, const TrainConfig& train,
                              const std::function<void(int, double)>& on_step) {
  if (examples.empty()) throw ArgumentError("train_mclm: no usable examples");
  if (train.batch < 1 || train.steps < 0) throw ArgumentError("train_mclm: bad schedule");
  TrainResult result;
  result.params = init_params(config, vocab.size(), train.seed);
  AdamConfig adam_config;
  adam_config.lr = train.lr;
  Adam adam(adam_config);
  Rng rng(train.seed ^ 0x2545f4914f6cdd1dULL);
  for (int step = 0; step < train.steps; ++step) {
    std::vector<Example> batch;
    for (int b = 0; b < train.batch; ++b) batch.push_back(examples[rng.below(examples.size())]);
    ad::Tape tape;
    BoundParams bound(tape, result.params, true);
    const Var loss = nll_loss_var(bound, config, vocab, batch);
    tape.backward(loss);
    adam.step(result.params, bound.grads());
    result.losses.push_back(loss.value().item());
    if (on_step) on_step(step, result.losses.back());
  }
  return result;
}

TrainResult train_mclm(const std::vector<geom::ConformerRecord>& records,
                       const ParamStore& encoder_params, const set::SetConfig& encoder_config,
                       const std::string& encoder_prefix, const Vocab& vocab,
                       const MclmConfig& config, const TrainConfig& train,
                       const std::function<void(int, double)>& on_step) {
  if (encoder_config.proj_dim != config.cond_dim)
    throw ShapeError("train_mclm: encoder projection width " +
                     std::to_string(encoder_config.proj_dim) + " != cond_dim " +
                     std::to_string(config.cond_dim));
  std::vector<Example> examples;
  std::size_t skipped = 0;
  for (const auto& rec : records) {
    std::vector<int> ids;
    try {
      ids = vocab.encode(rec.smiles);
    } catch (const Error&) {
      ++skipped;
      continue;
    }
    ids.push_back(kEos);
    if (ids.size() + 1 > static_cast<std::size_t>(config.max_positions)) {
      ++skipped;
      continue;
    }
    vocab.dataset_id(rec.dataset);
    const auto out = set::encode(encoder_params, encoder_config, rec.cloud, encoder_prefix);
    examples.push_back({rec.dataset, normalize_condition(out.x), std::move(ids)});
  }
  TrainResult result = train_on_examples(examples, vocab, config, train, on_step);
  result.skipped = skipped;
  return result;
}

GenResult generate(const ParamStore& params, const MclmConfig& config, const Vocab& vocab,
                   const GenRequest& request, bool keep_logits) {
  if (request.max_len < 1) throw ArgumentError("generate: max_len must be >= 1");
  if (!(request.temperature >= 0.0)) throw ArgumentError("generate: temperature must be >= 0");
  if (request.x.size() != static_cast<std::size_t>(config.cond_dim))
    throw ShapeError("generate: conditioning has " + std::to_string(request.x.size()) +
                     " values, expected " + std::to_string(config.cond_dim));
  vocab.dataset_id(request.dataset);
  const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(request.max_len),
                                                  static_cast<std::size_t>(config.max_positions) - 1);
  const Tensor x({1, request.x.size()}, request.x);
  Rng rng(request.seed);
  GenResult result;
  std::vector<int> tokens;
  while (tokens.size() < limit) {
    ad::Tape tape;
    BoundParams bound(tape, params, false);
    const Var h = assemble_input(bound, config, vocab, request.dataset, tape.constant(x), tokens);
    const Var logits = decoder_logits(bound, config, h);
    const std::size_t v = vocab.size();
    const double* last = logits.value().data().data() + (logits.shape()[0] - 1) * v;
    std::vector<double> row(last, last + v);
    for (std::size_t id = 0; id < v; ++id) {
      const int i = static_cast<int>(id);
      if (i == kPad || i == kBos || vocab.is_dataset(i)) row[id] = -std::numeric_limits<double>::infinity();
    }
    if (keep_logits) result.step_logits.push_back(row);
    int next;
    if (request.temperature == 0.0) {
      next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      const double mx = *std::max_element(row.begin(), row.end());
      std::vector<double> p(v);
      double z = 0.0;
      for (std::size_t id = 0; id < v; ++id) z += (p[id] = std::exp((row[id] - mx) / request.temperature));
      double u = rng.uniform() * z;
      next = static_cast<int>(v) - 1;
      for (std::size_t id = 0; id < v; ++id) {
        if (p[id] == 0.0) continue;
        if (u < p[id]) {
          next = static_cast<int>(id);
          break;
        }
        u -= p[id];
      }
      while (p[static_cast<std::size_t>(next)] == 0.0) --next;
    }
    result.trace.push_back(next);
    if (next == kEos) break;
    tokens.push_back(next);
  }
  result.smiles = vocab.decode(tokens);
  return result;
}

std::string format_generation_jsonl(const std::vector<GenerationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = {{"id", r.id},
                        {"smiles", r.smiles},
                        {"dataset_token", r.dataset_token},
                        {"seed", r.seed},
                        {"valid", r.valid}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace molspace::mclm
