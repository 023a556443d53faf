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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "molspace/contrastive.hpp"
#include "molspace/error.hpp"
#include "molspace/gradcheck.hpp"
#include "molspace/synth.hpp"

using namespace molspace;
using namespace molspace::contrastive;

namespace {

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t d) {
  Matrix m(n, std::vector<double>(d));
  for (auto& row : m)
    for (double& v : row) v = rng.normal();
  return m;
}

bool bit_equal(const LossValues& a, const LossValues& b) {
  auto same = [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; };
  if (!same(a.total, b.total)) return false;
  for (std::size_t i = 0; i < a.pocket_losses.size(); ++i)
    if (!same(a.pocket_losses[i], b.pocket_losses[i]) || !same(a.ligand_losses[i], b.ligand_losses[i]))
      return false;
  return true;
}

}  // namespace

TEST_CASE("cosine_similarity") {
  const std::vector<double> a{1, 2, 3};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == -1.0);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), ArgumentError);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 0}), ShapeError);
}

TEST_CASE("collision_sets") {
  using Sets = std::vector<std::vector<std::size_t>>;
  CHECK(collision_sets({"A", "B", "C"}) == Sets{{0}, {1}, {2}});
  CHECK(collision_sets({"A", "A", "B"}) == Sets{{0, 1}, {0, 1}, {2}});
  CHECK(collision_sets({"X", "X", "X", "X"}) == Sets(4, {0, 1, 2, 3}));
  CHECK(collision_sets({}).empty());
  CHECK(pocket_positives({"A", "A", "B"}, {5.0, 7.0, 1.0}) == std::vector<int>{1, 1, 2});
  CHECK(pocket_positives({"A", "A", "A"}, {7.0, 7.0, 7.0}) == std::vector<int>{0, 0, 0});
}

TEST_CASE("cf_infonce hand examples") {
  SUBCASE("uniform similarities") {
    const Matrix l{{1, 0}, {1, 0}}, p{{1, 0}, {1, 0}};
    const LossValues r = cf_infonce(l, p, {"A", "B"}, {1, 1}, 1.0);
    for (double v : r.pocket_losses) CHECK(std::abs(v - std::log(2.0)) < 1e-12);
    for (double v : r.ligand_losses) CHECK(std::abs(v - std::log(2.0)) < 1e-12);
    CHECK(std::abs(r.total - 2.0 * std::log(2.0)) < 1e-9);
  }
  SUBCASE("shared pocket picks the stronger binder") {
    const Matrix l{{1, 0}, {0, 1}}, p{{1, 0}, {1, 0}};
    const LossValues r = cf_infonce(l, p, {"A", "A"}, {7.0, 5.0}, 1.0);
    const double lp = std::log(1.0 + std::exp(-1.0));
    CHECK(std::abs(r.pocket_losses[0] - lp) < 1e-12);
    CHECK(std::abs(r.pocket_losses[1] - lp) < 1e-12);
    CHECK(std::abs(r.ligand_losses[0] - std::log(2.0)) < 1e-12);
    CHECK(std::abs(r.ligand_losses[1] - std::log(2.0)) < 1e-12);
    CHECK(std::abs(r.total - (lp + std::log(2.0))) < 1e-12);
    CHECK(std::abs(r.total - 1.0064) < 1e-4);
  }
  SUBCASE("errors") {
    const Matrix one{{1, 0}};
    CHECK_THROWS_AS(cf_infonce(one, one, {"A"}, {1}, 1.0), ArgumentError);
    const Matrix two{{1, 0}, {0, 1}};
    CHECK_THROWS_AS(cf_infonce(two, two, {"A", "B"}, {1, 1}, 0.0), ArgumentError);
    CHECK_THROWS_AS(cf_infonce(two, two, {"A", "B"}, {1, 1}, -1.0), ArgumentError);
  }
}

TEST_CASE("collision-free batches reduce to symmetric InfoNCE bit for bit") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10), d = 1 + rng.below(8);
    const Matrix l = random_matrix(rng, n, d), p = random_matrix(rng, n, d);
    std::vector<std::string> ids;
    std::vector<double> aff;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("pocket" + std::to_string(i));
      aff.push_back(rng.uniform(4, 10));
    }
    const double tau = rng.uniform(0.05, 2.0);
    CHECK(bit_equal(cf_infonce(l, p, ids, aff, tau), symmetric_infonce(l, p, tau)));
  }
}

TEST_CASE("cf_infonce properties") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(8), d = 2 + rng.below(6);
    const Matrix l = random_matrix(rng, n, d), p = random_matrix(rng, n, d);
    std::vector<std::string> ids;
    std::vector<double> aff;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("p" + std::to_string(rng.below(3)));
      aff.push_back(static_cast<double>(rng.below(4)));
    }
    const double tau = rng.uniform(0.05, 2.0);
    const LossValues base = cf_infonce(l, p, ids, aff, tau);
    CHECK(std::isfinite(base.total));
    CHECK(base.total >= 0.0);

    // Batch permutation permutes per-sample losses.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Matrix lp, pp;
    std::vector<std::string> ip;
    std::vector<double> ap;
    for (std::size_t i : perm) {
      lp.push_back(l[i]);
      pp.push_back(p[i]);
      ip.push_back(ids[i]);
      ap.push_back(aff[i]);
    }
    // Distinct affinities inside each collision set keep the positive choice
    // independent of batch order.
    bool distinct = true;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) distinct &= !(ids[i] == ids[j] && aff[i] == aff[j]);
    if (distinct) {
      const LossValues permuted = cf_infonce(lp, pp, ip, ap, tau);
      CHECK(std::abs(permuted.total - base.total) < 1e-12);
      for (std::size_t k = 0; k < n; ++k) {
        CHECK(std::abs(permuted.pocket_losses[k] - base.pocket_losses[perm[k]]) < 1e-12);
        CHECK(std::abs(permuted.ligand_losses[k] - base.ligand_losses[perm[k]]) < 1e-12);
      }
    }

    // Positive rescaling of either embedding set changes nothing.
    Matrix ls = l, ps = p;
    const double a = rng.uniform(0.1, 10), b = rng.uniform(0.1, 10);
    for (auto& r : ls)
      for (double& v : r) v *= a;
    for (auto& r : ps)
      for (double& v : r) v *= b;
    CHECK(std::abs(cf_infonce(ls, ps, ids, aff, tau).total - base.total) < 1e-12);
  }
}

TEST_CASE("cf_infonce gradients") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.below(5), d = 2 + rng.below(4);
    std::vector<std::string> ids;
    std::vector<double> aff;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("p" + std::to_string(rng.below(2)));
      aff.push_back(rng.uniform(4, 9));
    }
    const auto targets = pocket_positives(ids, aff);
    const ad::ScalarFn fn = [&](ad::Tape&, const std::vector<ad::Var>& v) {
      return cf_infonce_vars(v[0], v[1], v[2], targets).total;
    };
    const auto r = ad::check_gradients(
        fn, {molspace::random_normal({n, d}, 1.0, rng), molspace::random_normal({n, d}, 1.0, rng),
             ad::Tensor::scalar(std::log(rng.uniform(0.1, 1.0)))});
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("top1_accuracy") {
  const Matrix q{{1, 0}, {0, 1}, {1, 1}};
  CHECK(top1_accuracy(q, q) == 1.0);
  const Matrix swapped{{0, 1}, {1, 0}, {1, 1}};
  CHECK(top1_accuracy(q, swapped) == doctest::Approx(1.0 / 3.0));
  // Ties go to the lowest index: both candidates equal, so only row 0 hits.
  const Matrix tie{{1, 0}, {1, 0}};
  CHECK(top1_accuracy(tie, tie) == 0.5);
}

TEST_CASE("train_contrastive") {
  synth::PlantedConfig pc;
  pc.clusters = 4;
  pc.seed = 7;
  const synth::PlantedClusters gen(pc);
  Rng rng(8);
  const auto pairs = gen.corpus(32, rng);
  set::SetConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 16;
  cfg.channels = 2;
  cfg.proj_dim = 16;
  const ParamStore lig = set::init_params(cfg, 1), poc = set::init_params(cfg, 2);
  ContrastiveConfig cc;
  cc.steps = 40;
  cc.batch = 8;
  cc.lr = 3e-3;
  cc.seed = 3;

  const ContrastiveResult a = train_contrastive(pairs, lig, cfg, poc, cfg, cc);
  REQUIRE(a.history.size() == 40);
  CHECK(a.history.front().tau == doctest::Approx(kInitialTemperature));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += a.history[static_cast<std::size_t>(i)].loss;
    tail += a.history[a.history.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(tail < head);
  CHECK(a.params.contains("ligand.cls"));
  CHECK(a.params.contains("pocket.cls"));

  const ContrastiveResult b = train_contrastive(pairs, lig, cfg, poc, cfg, cc);
  CHECK(a.tau() == b.tau());
  CHECK(a.params == b.params);

  // A single pocket overall is degenerate.
  auto single = pairs;
  for (auto& p : single) p.pocket_id = "only";
  CHECK_THROWS_AS(train_contrastive(single, lig, cfg, poc, cfg, cc), ArgumentError);

  const auto path = std::filesystem::temp_directory_path() / "molspace_history.csv";
  save_history(a.history, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss,tau");
  std::filesystem::remove(path);
}
