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

#include "molspace/set_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace::set {

using ad::Tensor;
using ad::Var;

void SetConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("set config: " + what);
  };
  require(layers >= 1, "layers must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(dim >= 1 && dim % heads == 0, "dim must be a positive multiple of heads");
  require(channels >= 1, "channels must be >= 1");
  require(proj_dim >= 1, "proj_dim must be >= 1");
  require(max_atoms >= 1, "max_atoms must be >= 1");
  require(modality == "ligand" || modality == "pocket", "modality must be ligand or pocket");
}

std::string config_to_json(const SetConfig& c) {
  nlohmann::json j = {{"layers", c.layers},     {"heads", c.heads},
                      {"dim", c.dim},           {"channels", c.channels},
                      {"proj_dim", c.proj_dim}, {"max_atoms", c.max_atoms},
                      {"modality", c.modality}};
  return j.dump(2) + "\n";
}

SetConfig config_from_json(const std::string& text, const std::string& origin) {
  SetConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.dim = j.value("dim", c.dim);
    c.channels = j.value("channels", c.channels);
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    c.max_atoms = j.value("max_atoms", c.max_atoms);
    c.modality = j.value("modality", c.modality);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin, 0, e.what());
  }
  c.validate();
  return c;
}

void save_config(const SetConfig& config, const std::filesystem::path& path) {
  io::write_text(path, config_to_json(config));
}

SetConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return config_from_json(std::string(bytes.begin(), bytes.end()), path.string());
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".config.json";
}

namespace {

std::string layer_name(const std::string& prefix, int layer, const char* name) {
  return prefix + "l" + std::to_string(layer) + "." + name;
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

/// Applies a [c, c] channel map identically to every spatial axis.
Var mix_channels(Var v, Var w, std::size_t channels) {
  const std::size_t m = v.shape()[0];
  return ad::reshape(ad::matmul(ad::reshape(v, {3 * m, channels}), w), {m, 3 * channels});
}

Var affine_layernorm(Var x, Var gain, Var bias) {
  return ad::add(ad::mul(ad::layernorm(x), gain), bias);
}

}  // namespace

ParamStore init_params(const SetConfig& config, std::uint64_t seed, const std::string& prefix) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = sz(config.dim), c = sz(config.channels), h = sz(config.heads);
  const std::size_t hidden = 2 * d;
  auto glorot = [&](std::size_t in, std::size_t out) {
    return random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  ParamStore p;
  p.add(prefix + "embed", random_normal({kAtomTypes, d}, 1.0, rng));
  p.add(prefix + "cls", random_normal({1, d}, 1.0, rng));
  for (int l = 0; l < config.layers; ++l) {
    auto name = [&](const char* n) { return layer_name(prefix, l, n); };
    p.add(name("wq"), glorot(d, d));
    p.add(name("wk"), glorot(d, d));
    p.add(name("wv"), glorot(d, d));
    p.add(name("wo"), glorot(d, d));
    // Length scales 1.5, 3, 6, ... angstrom across heads: lambda = exp(rho).
    Tensor rho({h});
    for (std::size_t k = 0; k < h; ++k) rho[k] = -std::log(1.5 * std::pow(2.0, static_cast<double>(k)));
    p.add(name("rho"), rho);
    p.add(name("wvec"), Tensor({h}, 0.0));
    p.add(name("u"), random_normal({h, c}, 0.5, rng));
    p.add(name("wvv"), glorot(h * c, c));
    p.add(name("wvo"), glorot(c, c));
    p.add(name("ln1.g"), Tensor({d}, 1.0));
    p.add(name("ln1.b"), Tensor({d}, 0.0));
    p.add(name("w1"), glorot(d, hidden));
    p.add(name("b1"), Tensor({hidden}, 0.0));
    p.add(name("wn"), glorot(c, hidden));
    p.add(name("w2"), glorot(hidden, d));
    p.add(name("b2"), Tensor({d}, 0.0));
    p.add(name("ln2.g"), Tensor({d}, 1.0));
    p.add(name("ln2.b"), Tensor({d}, 0.0));
    p.add(name("wg"), glorot(d, c));
    p.add(name("bg"), Tensor({c}, 0.0));
    p.add(name("wv1"), glorot(c, c));
    p.add(name("wv2"), glorot(c, c));
  }
  const std::size_t dp = sz(config.proj_dim);
  p.add(prefix + "proj.w1", glorot(d, d));
  p.add(prefix + "proj.b1", Tensor({d}, 0.0));
  p.add(prefix + "proj.w2", glorot(d, dp));
  p.add(prefix + "proj.b2", Tensor({dp}, 0.0));
  p.add(prefix + "mlm.w", glorot(d, kAtomTypes));
  p.add(prefix + "mlm.b", Tensor({kAtomTypes}, 0.0));
  return p;
}

EncoderVars encode_vars(const BoundParams& params, const SetConfig& config,
                        const geom::AtomicPointCloud& cloud, const std::vector<int>& z,
                        const std::string& prefix, bool keep_attention) {
  const std::size_t n = cloud.size();
  if (n > sz(config.max_atoms))
    throw InvariantError("encoder.max_atoms", "cloud has " + std::to_string(n) +
                                                  " atoms, limit " + std::to_string(config.max_atoms));
  if (z.size() != n) throw ShapeError("encode: atom type count differs from cloud size");
  ad::Tape& tape = params[prefix + "cls"].tape();
  const std::size_t m = n + 1, c = sz(config.channels);
  const std::size_t nh = sz(config.heads), dh = sz(config.head_dim());

  // Geometry, relative to the virtual atom at the centroid.
  const geom::Vec3 p0 = geom::center_of_positions(cloud);
  Tensor rel({m, 3}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) rel.at(i + 1, a) = cloud.positions()[i][a] - p0[a];
  Tensor d2({m, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double pi = i == 0 ? p0[a] : cloud.positions()[i - 1][a];
        const double pj = cloud.positions()[j - 1][a];
        s += (pi - pj) * (pi - pj);
      }
      d2.at(i, j) = d2.at(j, i) = s;
    }
  const Var positions = tape.constant(std::move(rel));
  const Var dist2 = tape.constant(std::move(d2));

  Var s = ad::concat({params[prefix + "cls"], ad::embedding_lookup(params[prefix + "embed"], z)}, 0);
  Var v = tape.constant(Tensor({m, 3 * c}, 0.0));
  EncoderVars out;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < config.layers; ++l) {
    auto P = [&](const char* name) { return params[layer_name(prefix, l, name)]; };
    const Var q = ad::matmul(s, P("wq"));
    const Var k = ad::matmul(s, P("wk"));
    const Var val = ad::matmul(s, P("wv"));
    const Var vdot = ad::matmul(v, ad::transpose(v));
    const Var rho = P("rho"), wvec = P("wvec"), u = P("u"), wvv = P("wvv");
    std::vector<Var> heads;
    Var vec_sum;
    if (keep_attention) out.attention.emplace_back();
    for (std::size_t h = 0; h < nh; ++h) {
      const Var qh = ad::slice(q, 1, h * dh, dh);
      const Var kh = ad::slice(k, 1, h * dh, dh);
      const Var lambda2 = ad::exp(ad::mul_const(ad::slice(rho, 0, h, 1), 2.0));
      Var logits = ad::mul_const(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh);
      logits = ad::sub(logits, ad::scale(dist2, lambda2));
      logits = ad::add(logits, ad::scale(vdot, ad::slice(wvec, 0, h, 1)));
      const Var attn = ad::softmax_lastdim(logits);
      if (keep_attention) out.attention.back().push_back(attn.value());
      heads.push_back(ad::matmul(attn, ad::slice(val, 1, h * dh, dh)));

      // Sum_j a_ij (p_j - p_i), scaled per channel by u_h.
      const Var relpos = ad::sub(ad::matmul(attn, positions), positions);
      const Var pos_term =
          ad::reshape(ad::matmul(ad::reshape(relpos, {3 * m, 1}), ad::slice(u, 0, h, 1)), {m, 3 * c});
      const Var mixed = ad::matmul(attn, mix_channels(v, ad::slice(wvv, 0, h * c, c), c));
      const Var head_vec = ad::add(mixed, pos_term);
      vec_sum = h == 0 ? head_vec : ad::add(vec_sum, head_vec);
    }
    const Var attn_out = ad::matmul(ad::concat(heads, 1), P("wo"));
    s = affine_layernorm(ad::add(s, attn_out), P("ln1.g"), P("ln1.b"));
    v = ad::add(v, mix_channels(vec_sum, P("wvo"), c));

    // Scalar MLP with vector-norm feedback.
    Var hidden = ad::add(ad::matmul(s, P("w1")), P("b1"));
    hidden = ad::silu(ad::add(hidden, ad::matmul(ad::channel_norms(v, c), P("wn"))));
    const Var mlp = ad::add(ad::matmul(hidden, P("w2")), P("b2"));
    s = affine_layernorm(ad::add(s, mlp), P("ln2.g"), P("ln2.b"));

    // Gated vector update, then mean-channel-norm normalisation.
    const Var gate = ad::sigmoid(ad::add(ad::matmul(s, P("wg")), P("bg")));
    const Var gate3 = ad::concat({gate, gate, gate}, 1);
    const Var gated = ad::mul(mix_channels(v, P("wv1"), c), gate3);
    v = ad::channel_normalize(ad::add(v, mix_channels(gated, P("wv2"), c)), c);
  }
  out.scalars = s;
  out.vectors = v;
  out.h = ad::slice(s, 0, 0, 1);
  out.x = project_vars(params, out.h, prefix);
  return out;
}

ad::Var project_vars(const BoundParams& params, ad::Var h, const std::string& prefix) {
  const Var hidden =
      ad::silu(ad::add(ad::matmul(h, params[prefix + "proj.w1"]), params[prefix + "proj.b1"]));
  return ad::add(ad::matmul(hidden, params[prefix + "proj.w2"]), params[prefix + "proj.b2"]);
}

std::vector<double> project(const ParamStore& params, const std::vector<double>& h,
                            const std::string& prefix) {
  const std::size_t d = params.at(prefix + "proj.w1").dim(0);
  if (h.size() != d)
    throw ShapeError("project: expected " + std::to_string(d) + " inputs, got " +
                     std::to_string(h.size()));
  ad::Tape tape;
  BoundParams bound(tape, params, false);
  const Var x = project_vars(bound, tape.constant(Tensor({1, d}, h)), prefix);
  return x.value().vec();
}

EncoderOutput encode(const ParamStore& params, const SetConfig& config,
                     const geom::AtomicPointCloud& cloud, const std::string& prefix,
                     bool keep_attention) {
  ad::Tape tape;
  BoundParams bound(tape, params, false);
  EncoderVars vars =
      encode_vars(bound, config, cloud, cloud.atomic_numbers(), prefix, keep_attention);
  EncoderOutput out;
  out.h = vars.h.value().vec();
  out.x = vars.x.value().vec();
  out.scalars = vars.scalars.value();
  out.vectors = vars.vectors.value();
  out.attention = std::move(vars.attention);
  return out;
}

// ---------------------------------------------------------------------------
// MLM

std::size_t mlm_selection_size(std::size_t n_atoms) {
  const auto k = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n_atoms)));
  return std::max<std::size_t>(1, k);
}

std::array<std::size_t, 3> mlm_split(std::size_t selected) {
  constexpr std::array<double, 3> kShares = {0.8, 0.1, 0.1};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t used = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    // Shares are tenths; scale by 10 so the products are exact integers / 10.
    const std::size_t tenths = static_cast<std::size_t>(std::llround(kShares[b] * 10.0)) * selected;
    counts[b] = tenths / 10;
    remainder[b] = static_cast<double>(tenths % 10);
    used += counts[b];
  }
  // Largest remainder first; ties go to the earlier bucket.
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; used < selected; ++i, ++used) ++counts[order[i % 3]];
  return counts;
}

MlmSample mlm_corrupt(const geom::AtomicPointCloud& cloud, std::uint64_t seed,
                      const std::vector<int>& alphabet) {
  const std::size_t n = cloud.size();
  Rng rng(seed);
  MlmSample sample;
  sample.cloud = cloud;
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  const std::size_t k = mlm_selection_size(n);
  sample.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(sample.selected.begin(), sample.selected.end());

  const auto counts = mlm_split(k);
  std::vector<Corruption> kinds;
  kinds.insert(kinds.end(), counts[0], Corruption::kMasked);
  kinds.insert(kinds.end(), counts[1], Corruption::kRandom);
  kinds.insert(kinds.end(), counts[2], Corruption::kUnchanged);
  rng.shuffle(kinds);
  sample.kinds = kinds;

  std::vector<int> types = alphabet;
  if (types.empty()) {
    std::set<int> seen(cloud.atomic_numbers().begin(), cloud.atomic_numbers().end());
    types.assign(seen.begin(), seen.end());
  }
  sample.corrupted_z = cloud.atomic_numbers();
  for (std::size_t s = 0; s < k; ++s) {
    const auto idx = static_cast<std::size_t>(sample.selected[s]);
    sample.targets.push_back(cloud.atomic_numbers()[idx]);
    switch (kinds[s]) {
      case Corruption::kMasked: sample.corrupted_z[idx] = kMaskId; break;
      case Corruption::kRandom: sample.corrupted_z[idx] = types[rng.below(types.size())]; break;
      case Corruption::kUnchanged: break;
    }
  }
  return sample;
}

ad::Var mlm_logits(const BoundParams& params, ad::Var atom_scalars, const std::string& prefix) {
  return ad::add(ad::matmul(atom_scalars, params[prefix + "mlm.w"]), params[prefix + "mlm.b"]);
}

ad::Var mlm_loss_var(const BoundParams& params, const SetConfig& config, const MlmSample& sample,
                     const std::string& prefix) {
  if (sample.selected.empty()) throw ArgumentError("mlm_loss: empty selection");
  const EncoderVars vars = encode_vars(params, config, sample.cloud, sample.corrupted_z, prefix);
  const Var atoms = ad::slice(vars.scalars, 0, 1, sample.cloud.size());
  const Var picked = ad::embedding_lookup(atoms, sample.selected);
  return ad::cross_entropy(mlm_logits(params, picked, prefix), sample.targets);
}

double mlm_loss(const ParamStore& params, const SetConfig& config, const MlmSample& sample,
                const std::string& prefix) {
  ad::Tape tape;
  BoundParams bound(tape, params, false);
  return mlm_loss_var(bound, config, sample, prefix).value().item();
}

PretrainResult pretrain_encoder(const std::vector<geom::AtomicPointCloud>& corpus,
                                const SetConfig& config, const PretrainConfig& train,
                                const std::function<void(int, double)>& on_step) {
  if (corpus.empty()) throw ArgumentError("pretrain_encoder: empty corpus");
  if (train.steps < 0 || train.batch < 1) throw ArgumentError("pretrain_encoder: bad schedule");
  std::set<int> seen;
  for (const auto& c : corpus) seen.insert(c.atomic_numbers().begin(), c.atomic_numbers().end());
  const std::vector<int> alphabet(seen.begin(), seen.end());

  PretrainResult result;
  result.params = init_params(config, train.seed);
  Rng rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamConfig adam_config;
  adam_config.lr = train.lr;
  Adam adam(adam_config);
  for (int step = 0; step < train.steps; ++step) {
    ad::Tape tape;
    BoundParams bound(tape, result.params, true);
    Var total;
    for (int b = 0; b < train.batch; ++b) {
      const auto& cloud = corpus[rng.below(corpus.size())];
      const Var loss = mlm_loss_var(bound, config, mlm_corrupt(cloud, rng.next_u64(), alphabet));
      total = b == 0 ? loss : ad::add(total, loss);
    }
    total = ad::mul_const(total, 1.0 / train.batch);
    tape.backward(total);
    const double value = total.value().item();
    adam.step(result.params, bound.grads());
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return result;
}

}  // namespace molspace::set
