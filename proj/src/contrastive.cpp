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

#include "molspace/contrastive.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace::contrastive {

using ad::Tensor;
using ad::Var;

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<std::size_t>> collision_sets(const std::vector<std::string>& pocket_ids) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pocket_ids.size(); ++i) groups[pocket_ids[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(pocket_ids.size());
  for (const auto& id : pocket_ids) out.push_back(groups[id]);
  return out;
}

std::vector<int> pocket_positives(const std::vector<std::string>& pocket_ids,
                                  const std::vector<double>& affinities) {
  if (affinities.size() != pocket_ids.size())
    throw ShapeError("pocket_positives: one affinity per pair required");
  const auto sets = collision_sets(pocket_ids);
  std::vector<int> out;
  for (const auto& members : sets) {
    std::size_t best = members.front();
    for (std::size_t j : members)
      if (affinities[j] > affinities[best]) best = j;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

LossVars cf_infonce_vars(Var ligand, Var pocket, Var log_tau, std::span<const int> pocket_targets) {
  const std::size_t n = ligand.shape()[0];
  if (n < 2) throw ArgumentError("cf_infonce: batch needs at least two pairs");
  if (pocket.shape() != ligand.shape()) throw ShapeError("cf_infonce: embedding shapes differ");
  if (pocket_targets.size() != n) throw ShapeError("cf_infonce: one target per pocket required");
  // sim[i][j] = s(ligand_i, pocket_j) / tau
  const Var sim = ad::scale(ad::matmul(ad::normalize_rows(ligand), ad::transpose(ad::normalize_rows(pocket))),
                            ad::exp(ad::mul_const(log_tau, -1.0)));
  std::vector<int> diagonal(n);
  std::iota(diagonal.begin(), diagonal.end(), 0);
  LossVars out;
  out.ligand_losses = ad::cross_entropy_rows(sim, diagonal);
  out.pocket_losses = ad::cross_entropy_rows(ad::transpose(sim), pocket_targets);
  out.total = ad::mul_const(ad::add(ad::sum(out.pocket_losses), ad::sum(out.ligand_losses)), 0.5);
  return out;
}

namespace {

Tensor to_tensor(const Matrix& rows) {
  if (rows.empty()) throw ArgumentError("empty embedding matrix");
  const std::size_t d = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("ragged embedding matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), d}, std::move(flat));
}

LossValues evaluate(const Matrix& ligand, const Matrix& pocket, const std::vector<int>& targets,
                    double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("temperature must be positive");
  ad::Tape tape;
  const Tensor l = to_tensor(ligand), p = to_tensor(pocket);
  const Tensor lt = Tensor::scalar(std::log(tau));
  const LossVars vars =
      cf_infonce_vars(tape.constant(l), tape.constant(p), tape.constant(lt), targets);
  return {vars.total.value().item(), vars.pocket_losses.value().vec(),
          vars.ligand_losses.value().vec()};
}

}  // namespace

LossValues cf_infonce(const Matrix& ligand, const Matrix& pocket,
                      const std::vector<std::string>& pocket_ids,
                      const std::vector<double>& affinities, double tau) {
  if (pocket_ids.size() != ligand.size()) throw ShapeError("cf_infonce: one pocket id per pair");
  return evaluate(ligand, pocket, pocket_positives(pocket_ids, affinities), tau);
}

LossValues symmetric_infonce(const Matrix& ligand, const Matrix& pocket, double tau) {
  std::vector<int> diagonal(ligand.size());
  std::iota(diagonal.begin(), diagonal.end(), 0);
  return evaluate(ligand, pocket, diagonal, tau);
}

double top1_accuracy(const Matrix& queries, const Matrix& candidates) {
  if (queries.size() != candidates.size() || queries.empty())
    throw ShapeError("top1_accuracy: need one candidate per query");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const double s = cosine_similarity(queries[i], candidates[j]);
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double ContrastiveResult::tau() const { return std::exp(params.at("log_tau")[0]); }

ParamStore joint_params(const ParamStore& ligand, const ParamStore& pocket, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
  ParamStore joint;
  joint.merge(ligand, "ligand.");
  joint.merge(pocket, "pocket.");
  joint.add("log_tau", Tensor::scalar(std::log(tau)));
  return joint;
}

ContrastiveResult train_contrastive(const std::vector<geom::LigandPocketPair>& pairs,
                                    const ParamStore& ligand_params, const set::SetConfig& ligand_cfg,
                                    const ParamStore& pocket_params, const set::SetConfig& pocket_cfg,
                                    const ContrastiveConfig& config,
                                    const std::function<void(const HistoryRow&)>& on_step) {
  std::set<std::string> pockets;
  for (const auto& p : pairs) pockets.insert(p.pocket_id);
  if (pockets.size() < 2)
    throw ArgumentError("train_contrastive: corpus needs at least two distinct pockets");
  if (config.batch < 2) throw ArgumentError("train_contrastive: batch must be >= 2");
  const std::size_t batch = std::min(static_cast<std::size_t>(config.batch), pairs.size());

  ContrastiveResult result;
  result.params = joint_params(ligand_params, pocket_params, config.initial_tau);
  AdamConfig adam_config;
  adam_config.lr = config.lr;
  Adam adam(adam_config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int step = 0; step < config.steps; ++step) {
    // Partial Fisher-Yates: the first `batch` entries are a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < batch; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
    ad::Tape tape;
    BoundParams bound(tape, result.params, true);
    std::vector<Var> lig_rows, poc_rows;
    std::vector<std::string> ids;
    std::vector<double> affinity;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& pair = pairs[order[b]];
      const auto& conf = pair.ligand_conformers[rng.below(pair.ligand_conformers.size())];
      lig_rows.push_back(
          set::encode_vars(bound, ligand_cfg, conf, conf.atomic_numbers(), "ligand.").x);
      poc_rows.push_back(
          set::encode_vars(bound, pocket_cfg, pair.pocket, pair.pocket.atomic_numbers(), "pocket.").x);
      ids.push_back(pair.pocket_id);
      affinity.push_back(pair.affinity_value);
    }
    const auto targets = pocket_positives(ids, affinity);
    const LossVars loss =
        cf_infonce_vars(ad::concat(lig_rows, 0), ad::concat(poc_rows, 0), bound["log_tau"], targets);
    tape.backward(loss.total);
    const HistoryRow row{step, loss.total.value().item(), result.tau()};
    adam.step(result.params, bound.grads());
    result.history.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

void save_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
  std::string text = "step,loss,tau\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.step, r.loss, r.tau);
    text += buf;
  }
  io::write_text(path, text);
}

}  // namespace molspace::contrastive
