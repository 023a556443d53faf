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
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "molspace/error.hpp"
#include "molspace/gradcheck.hpp"
#include "molspace/set_encoder.hpp"
#include "test_util.hpp"

using namespace molspace;
using namespace molspace::set;
using molspace::testing::max_abs_diff;
using molspace::testing::random_cloud;

namespace {

SetConfig small_config() {
  SetConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 16;
  c.channels = 4;
  c.proj_dim = 8;
  return c;
}

SetConfig tiny_config() {
  SetConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 4;
  c.channels = 2;
  c.proj_dim = 3;
  return c;
}

/// Vector channel (atom i, channel ch) of a [M, 3c] stream.
geom::Vec3 channel_vec(const ad::Tensor& v, std::size_t i, std::size_t ch, std::size_t c) {
  return {v.at(i, ch), v.at(i, c + ch), v.at(i, 2 * c + ch)};
}

}  // namespace

TEST_CASE("config validation and sidecar") {
  SetConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.proj_dim == 256);
  c.dim = 130;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = small_config();
  c.modality = "pocket";
  const auto path = std::filesystem::temp_directory_path() / "molspace_set.config.json";
  save_config(c, path);
  CHECK(load_config(path) == c);
  std::filesystem::remove(path);
  CHECK(config_sidecar("a/b.ckpt").string() == "a/b.ckpt.config.json");
  CHECK_THROWS_AS(config_from_json("{", "x"), FormatError);
}

TEST_CASE("init is deterministic per seed") {
  CHECK(init_params(small_config(), 3) == init_params(small_config(), 3));
  CHECK_FALSE(init_params(small_config(), 3) == init_params(small_config(), 4));
  const ParamStore p = init_params(small_config(), 3, "ligand.");
  CHECK(p.contains("ligand.cls"));
  CHECK(p.contains("ligand.l1.rho"));
}

TEST_CASE("E(3) invariance and O(3) equivariance") {
  const SetConfig cfg = small_config();
  ParamStore params = init_params(cfg, 11);
  // Non-zero vector-logit weights so the V.V term is exercised.
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params.name(i).ends_with("wvec")) params.value(i).fill(0.3);
  Rng rng(12);
  double worst_x = 0.0, worst_v = 0.0, worst_s = 0.0;
  for (int cloud_i = 0; cloud_i < 20; ++cloud_i) {
    const auto cloud = random_cloud(rng, 2 + rng.below(12));
    const EncoderOutput ref = encode(params, cfg, cloud);
    const std::size_t c = static_cast<std::size_t>(cfg.channels);
    for (int t = 0; t < 5; ++t) {
      const auto motion = geom::random_motion(rng, t % 2 == 1, 1000.0);
      const EncoderOutput moved = encode(params, cfg, geom::apply_rigid_motion(cloud, motion));
      worst_x = std::max(worst_x, max_abs_diff(ref.x, moved.x));
      worst_x = std::max(worst_x, max_abs_diff(ref.h, moved.h));
      worst_s = std::max(worst_s, max_abs_diff(ref.scalars.vec(), moved.scalars.vec()));
      for (std::size_t i = 0; i <= cloud.size(); ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const geom::Vec3 a = channel_vec(ref.vectors, i, ch, c);
          const geom::Vec3 b = channel_vec(moved.vectors, i, ch, c);
          for (int r = 0; r < 3; ++r) {
            double rotated = 0.0;
            for (int k = 0; k < 3; ++k) rotated += motion.rotation[r][k] * a[k];
            worst_v = std::max(worst_v, std::abs(rotated - b[r]));
          }
        }
    }
  }
  CHECK(worst_x < 1e-6);
  CHECK(worst_s < 1e-6);
  CHECK(worst_v < 1e-6);
}

TEST_CASE("vector stream carries geometry") {
  // Guards against a trivially invariant encoder: the vectors must move with
  // the cloud and must not be all zero.
  const SetConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 13);
  Rng rng(14);
  const auto cloud = random_cloud(rng, 6);
  const EncoderOutput out = encode(params, cfg, cloud);
  double norm = 0.0;
  for (double v : out.vectors.data()) norm += v * v;
  CHECK(norm > 1e-3);
  geom::RigidMotion flip;
  flip.rotation = {{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const EncoderOutput mirrored = encode(params, cfg, geom::apply_rigid_motion(cloud, flip));
  CHECK(mirrored.vectors.at(1, 0) == doctest::Approx(-out.vectors.at(1, 0)));
}

TEST_CASE("translation leaves every output unchanged") {
  const SetConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 15);
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cloud = random_cloud(rng, 3 + rng.below(8));
    geom::RigidMotion shift;
    shift.translation = {rng.uniform(-1000, 1000), rng.uniform(-1000, 1000), rng.uniform(-1000, 1000)};
    const EncoderOutput a = encode(params, cfg, cloud);
    const EncoderOutput b = encode(params, cfg, geom::apply_rigid_motion(cloud, shift));
    CHECK(max_abs_diff(a.scalars.vec(), b.scalars.vec()) < 1e-8);
    CHECK(max_abs_diff(a.vectors.vec(), b.vectors.vec()) < 1e-8);
  }
}

TEST_CASE("atom permutation permutes per-atom outputs") {
  const SetConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 17);
  Rng rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cloud = random_cloud(rng, 3 + rng.below(9));
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> z;
    std::vector<geom::Vec3> p;
    for (std::size_t i : perm) {
      z.push_back(cloud.atomic_numbers()[i]);
      p.push_back(cloud.positions()[i]);
    }
    const EncoderOutput a = encode(params, cfg, cloud);
    const EncoderOutput b = encode(params, cfg, geom::AtomicPointCloud(z, p));
    CHECK(max_abs_diff(a.h, b.h) < 1e-6);
    CHECK(max_abs_diff(a.x, b.x) < 1e-6);
    const std::size_t d = static_cast<std::size_t>(cfg.dim);
    double worst = 0.0;
    for (std::size_t k = 0; k < perm.size(); ++k)
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst, std::abs(b.scalars.at(k + 1, j) - a.scalars.at(perm[k] + 1, j)));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("attention rows sum to one") {
  const SetConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 19);
  Rng rng(20);
  const auto cloud = random_cloud(rng, 9);
  const EncoderOutput out = encode(params, cfg, cloud, "", true);
  REQUIRE(out.attention.size() == static_cast<std::size_t>(cfg.layers));
  for (const auto& layer : out.attention) {
    REQUIRE(layer.size() == static_cast<std::size_t>(cfg.heads));
    for (const auto& a : layer)
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
          CHECK(a.at(i, j) >= 0.0);
          s += a.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("encode errors") {
  SetConfig cfg = small_config();
  cfg.max_atoms = 4;
  const ParamStore params = init_params(cfg, 21);
  Rng rng(22);
  CHECK_THROWS_AS(encode(params, cfg, random_cloud(rng, 5)), InvariantError);
  CHECK_NOTHROW(encode(params, cfg, random_cloud(rng, 4)));
  CHECK_NOTHROW(encode(params, cfg, random_cloud(rng, 1)));
}

TEST_CASE("projection head") {
  SetConfig cfg;  // default: d' = 256
  ParamStore params = init_params(cfg, 23);
  Rng rng(24);
  CHECK(encode(params, cfg, random_cloud(rng, 5)).x.size() == 256);

  const std::vector<double> h(static_cast<std::size_t>(cfg.dim), 0.5);
  params.at("proj.w1").fill(0.0);
  params.at("proj.w2").fill(0.0);
  params.at("proj.b2").fill(0.25);
  for (double v : project(params, h)) CHECK(v == 0.25);
  CHECK_THROWS_AS(project(params, std::vector<double>(3, 0.0)), ShapeError);

  // With b1 = 0 and w1 = 0 the hidden layer is silu(0) = 0 for every input,
  // so the head is constant; with w2 = I-like the map is linear in silu(h W1).
  params = init_params(cfg, 23);
  const auto a = project(params, std::vector<double>(static_cast<std::size_t>(cfg.dim), 1e-7));
  const auto b = project(params, std::vector<double>(static_cast<std::size_t>(cfg.dim), 2e-7));
  const auto zero = project(params, std::vector<double>(static_cast<std::size_t>(cfg.dim), 0.0));
  // silu(t) ~ t/2 near zero, so the head is linear in this regime.
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK((b[i] - zero[i]) == doctest::Approx(2.0 * (a[i] - zero[i])).epsilon(1e-5));
}

TEST_CASE("mlm selection arithmetic") {
  CHECK(mlm_selection_size(100) == 20);
  CHECK(mlm_selection_size(1) == 1);
  CHECK(mlm_selection_size(10) == 2);
  CHECK(mlm_selection_size(3) == 1);
  CHECK(mlm_split(20) == std::array<std::size_t, 3>{16, 2, 2});
  CHECK(mlm_split(1) == std::array<std::size_t, 3>{1, 0, 0});
  CHECK(mlm_split(2) == std::array<std::size_t, 3>{2, 0, 0});
  for (std::size_t k = 1; k < 200; ++k) {
    const auto s = mlm_split(k);
    CHECK(s[0] + s[1] + s[2] == k);
    CHECK(std::abs(static_cast<double>(s[0]) - 0.8 * static_cast<double>(k)) < 1.0);
  }
}

TEST_CASE("mlm_corrupt") {
  Rng rng(25);
  const auto cloud = random_cloud(rng, 100);
  const MlmSample s = mlm_corrupt(cloud, 7, {6, 7, 8, 16});
  CHECK(s.selected.size() == 20);
  std::array<int, 3> counts{};
  for (std::size_t i = 0; i < s.selected.size(); ++i) {
    const auto idx = static_cast<std::size_t>(s.selected[i]);
    CHECK(s.targets[i] == cloud.atomic_numbers()[idx]);
    switch (s.kinds[i]) {
      case Corruption::kMasked: ++counts[0]; CHECK(s.corrupted_z[idx] == kMaskId); break;
      case Corruption::kRandom: ++counts[1]; CHECK(s.corrupted_z[idx] != kMaskId); break;
      case Corruption::kUnchanged: ++counts[2]; CHECK(s.corrupted_z[idx] == s.targets[i]); break;
    }
  }
  CHECK(counts == std::array<int, 3>{16, 2, 2});
  CHECK(std::is_sorted(s.selected.begin(), s.selected.end()));
  // Unselected atoms are untouched.
  std::size_t changed = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) changed += s.corrupted_z[i] != cloud.atomic_numbers()[i];
  CHECK(changed <= 18);

  const MlmSample again = mlm_corrupt(cloud, 7, {6, 7, 8, 16});
  CHECK(again.selected == s.selected);
  CHECK(again.corrupted_z == s.corrupted_z);
  CHECK(mlm_corrupt(cloud, 8).selected != s.selected);

  const MlmSample one = mlm_corrupt(random_cloud(rng, 1), 1);
  CHECK(one.selected.size() == 1);
  CHECK(one.kinds[0] == Corruption::kMasked);
  const MlmSample ten = mlm_corrupt(random_cloud(rng, 10), 1);
  CHECK(ten.selected.size() == 2);
  CHECK(ten.kinds == std::vector<Corruption>{Corruption::kMasked, Corruption::kMasked});
}

TEST_CASE("mlm_loss values") {
  const SetConfig cfg = small_config();
  ParamStore params = init_params(cfg, 26);
  Rng rng(27);
  const auto cloud = random_cloud(rng, 12);
  const MlmSample sample = mlm_corrupt(cloud, 3);
  params.at("mlm.w").fill(0.0);
  params.at("mlm.b").fill(0.0);
  CHECK(mlm_loss(params, cfg, sample) == doctest::Approx(std::log(119.0)).epsilon(1e-12));

  // Bounded logits: 50 on carbon, 0 elsewhere, all-carbon cloud.
  const geom::AtomicPointCloud carbon(std::vector<int>(cloud.size(), 6), cloud.positions());
  params.at("mlm.b")[6] = 50.0;
  CHECK(mlm_loss(params, cfg, mlm_corrupt(carbon, 3)) < 1e-9);

  MlmSample empty = sample;
  empty.selected.clear();
  CHECK_THROWS_AS(mlm_loss(params, cfg, empty), ArgumentError);
}

TEST_CASE("mlm_loss gradients match finite differences for every parameter group") {
  const SetConfig cfg = tiny_config();
  Rng rng(28);
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore params = init_params(cfg, 30 + static_cast<std::uint64_t>(trial));
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params.name(i).ends_with("wvec")) params.value(i).fill(0.2);
    const MlmSample sample = mlm_corrupt(random_cloud(rng, 4 + rng.below(3), 2.0), rng.next_u64());
    std::vector<ad::Tensor> inputs;
    for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
    const ad::ScalarFn fn = [&](ad::Tape&, const std::vector<ad::Var>& vars) {
      const BoundParams bound(params, vars);
      return mlm_loss_var(bound, cfg, sample);
    };
    const auto result = ad::check_gradients(fn, inputs);
    CAPTURE(trial);
    MESSAGE("rel err " << result.max_rel_error << " evals " << result.evaluations);
    CHECK(result.max_rel_error < 1e-4);
  }
}

TEST_CASE("pretraining") {
  SetConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 16;
  cfg.channels = 2;
  cfg.proj_dim = 8;
  Rng rng(40);

  SUBCASE("all-carbon corpus is learned") {
    std::vector<geom::AtomicPointCloud> corpus;
    for (int i = 0; i < 50; ++i) {
      const auto c = random_cloud(rng, 3 + rng.below(6));
      corpus.emplace_back(std::vector<int>(c.size(), 6), c.positions());
    }
    PretrainConfig train;
    train.steps = 500;
    train.batch = 2;
    train.lr = 1e-2;
    train.seed = 1;
    const auto result = pretrain_encoder(corpus, cfg, train);
    REQUIRE(result.losses.size() == 500);
    MESSAGE("first " << result.losses.front() << " last " << result.losses.back());
    CHECK(result.losses.back() < 0.05);
  }
  SUBCASE("fixed seed gives identical checkpoints") {
    std::vector<geom::AtomicPointCloud> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(random_cloud(rng, 4));
    PretrainConfig train;
    train.steps = 5;
    train.batch = 2;
    train.seed = 9;
    const auto a = pretrain_encoder(corpus, cfg, train);
    const auto b = pretrain_encoder(corpus, cfg, train);
    CHECK(encode_checkpoint(a.params) == encode_checkpoint(b.params));
    CHECK(a.losses == b.losses);
  }
  SUBCASE("empty corpus") {
    CHECK_THROWS_AS(pretrain_encoder({}, cfg, PretrainConfig{}), ArgumentError);
  }
}
