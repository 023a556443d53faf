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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "molspace/binary_io.hpp"
#include "molspace/chem.hpp"
#include "molspace/error.hpp"
#include "molspace/retrieval.hpp"
#include "molspace/rng.hpp"
#include "oracles.hpp"

using namespace molspace;
using namespace molspace::retrieval;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("molspace_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Instance {
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> ids;
};

// Random vectors, with some rows repeated (under fresh ids) or collinear
// so that equal scores are common.
Instance random_instance(Rng& rng, std::size_t n, std::size_t dim) {
  Instance inst;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    if (i > 0 && rng.below(3) == 0) {
      v = inst.vectors[rng.below(i)];
      if (rng.below(2)) for (double& x : v) x *= 2.5;
    } else {
      for (double& x : v) x = rng.normal();
    }
    inst.vectors.push_back(v);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < n; ++i) inst.ids.push_back("m" + std::to_string(order[i] * 7919 % 100003));
  return inst;
}

}  // namespace

TEST_CASE("dot_f32 matches a double reference loosely and is order-fixed") {
  Rng rng(1);
  for (std::size_t n : {1u, 7u, 8u, 9u, 31u, 256u}) {
    std::vector<float> a(n), b(n);
    double ref = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
      ref += static_cast<double>(a[i]) * b[i];
    }
    CHECK(dot_f32(a.data(), b.data(), n) == doctest::Approx(ref).epsilon(1e-4));
  }
  CHECK_THROWS_AS(normalized_f32(std::vector<double>{0, 0, 0}), ArgumentError);
}

TEST_CASE("shard layout") {
  TempDir dir("shard_layout");
  const std::vector<float> data = {1, 0, 0, 0, 1, 0};
  const auto path = dir.path / "s.cse";
  Shard::write(path, 3, data, {"a", "b"});
  const auto bytes = io::read_file(path);
  REQUIRE(bytes.size() == 20 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CSE1");
  io::ByteReader r(bytes.data() + 4, 16, "hdr");
  CHECK(r.get<std::uint32_t>() == 1);
  CHECK(r.get<std::uint32_t>() == 3);
  CHECK(r.get<std::uint64_t>() == 2);
  const auto ids = io::read_file(ids_path(path));
  CHECK(std::string(ids.begin(), ids.end()) == "a\nb\n");

  const Shard s = Shard::open(path);
  CHECK(s.dim() == 3);
  CHECK(s.count() == 2);
  CHECK(s.row(1)[1] == 1.0f);

  SUBCASE("re-writing an opened shard reproduces its bytes") {
    const auto copy = dir.path / "copy.cse";
    Shard::write(copy, s.dim(), std::span<const float>(s.row(0), s.count() * s.dim()), s.ids());
    CHECK(io::read_file(copy) == bytes);
    CHECK(io::read_file(ids_path(copy)) == ids);
  }
  SUBCASE("corruptions are format errors") {
    auto bad = bytes;
    bad[0] = 'X';
    io::write_file(path, bad);
    CHECK_THROWS_AS(Shard::open(path), FormatError);
    bad = bytes;
    bad[4] = 2;
    io::write_file(path, bad);
    CHECK_THROWS_AS(Shard::open(path), FormatError);
    bad = bytes;
    bad.pop_back();
    io::write_file(path, bad);
    CHECK_THROWS_AS(Shard::open(path), FormatError);
    io::write_file(path, bytes);
    io::write_text(ids_path(path), "a\n");
    CHECK_THROWS_AS(Shard::open(path), FormatError);
    io::write_text(ids_path(path), "a\nb");
    CHECK_THROWS_AS(Shard::open(path), FormatError);
  }
  CHECK_THROWS_AS(Shard::write(path, 3, data, {"a"}), ShapeError);
  CHECK_THROWS_AS(Shard::open(dir.path / "missing.cse"), IoError);
}

TEST_CASE("build_store sharding and invariants") {
  TempDir dir("build_store");
  Rng rng(2);
  const Instance inst = random_instance(rng, 10, 5);
  const auto store = EmbeddingStore::build(inst.vectors, inst.ids, 4, dir.path);
  REQUIRE(store.shards().size() == 3);
  CHECK(store.shards()[0].count() == 4);
  CHECK(store.shards()[1].count() == 4);
  CHECK(store.shards()[2].count() == 2);
  CHECK(fs::exists(dir.path / "shard_00000.cse"));
  CHECK(fs::exists(dir.path / "shard_00002.ids"));
  CHECK(store.size() == 10);
  CHECK(store.dim() == 5);
  for (const auto& s : store.shards())
    for (std::size_t i = 0; i < s.count(); ++i)
      CHECK(std::sqrt(dot_f32(s.row(i), s.row(i), 5)) == doctest::Approx(1.0).epsilon(1e-6));

  const auto reopened = EmbeddingStore::open(dir.path);
  CHECK(reopened.size() == 10);

  TempDir other("build_store_bad");
  auto ids = inst.ids;
  ids[3] = ids[7];
  CHECK_THROWS_AS(EmbeddingStore::build(inst.vectors, ids, 4, other.path), InvariantError);
  auto vecs = inst.vectors;
  vecs[2].assign(5, 0.0);
  CHECK_THROWS_AS(EmbeddingStore::build(vecs, inst.ids, 4, other.path), InvariantError);
  vecs = inst.vectors;
  vecs[1].push_back(1.0);
  CHECK_THROWS_AS(EmbeddingStore::build(vecs, inst.ids, 4, other.path), ShapeError);
  CHECK_THROWS_AS(EmbeddingStore::build(inst.vectors, inst.ids, 0, other.path), ArgumentError);

  SUBCASE("a non-unit row is rejected on open") {
    std::vector<float> raw = {2, 0, 0, 0, 0};
    Shard::write(other.path / "shard_00000.cse", 5, raw, {"x"});
    CHECK_THROWS_AS(EmbeddingStore::open(other.path), InvariantError);
  }
  SUBCASE("ids duplicated across shards are rejected on open") {
    std::vector<float> raw = {1, 0, 0, 0, 0};
    Shard::write(other.path / "shard_00000.cse", 5, raw, {"x"});
    Shard::write(other.path / "shard_00001.cse", 5, raw, {"x"});
    CHECK_THROWS_AS(EmbeddingStore::open(other.path), InvariantError);
  }
}

TEST_CASE("topk_search equals the full-sort oracle") {
  TempDir dir("topk");
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(120);
    const std::size_t dim = 1 + rng.below(20);
    const Instance inst = random_instance(rng, n, dim);
    const std::size_t shard_size = 1 + rng.below(n + 3);
    fs::remove_all(dir.path);
    const auto store = EmbeddingStore::build(inst.vectors, inst.ids, shard_size, dir.path);
    std::vector<double> query(dim);
    // Half the queries are stored rows, which guarantees exact ties.
    if (trial % 2) {
      query = inst.vectors[rng.below(n)];
    } else {
      for (double& x : query) x = rng.normal();
    }
    const std::size_t k = 1 + rng.below(n + 5);
    const auto expect = oracle::naive_topk(inst.vectors, inst.ids, query, k);
    const auto serial = topk_search(store, query, k, 1);
    CHECK(serial == expect);
    for (unsigned threads : {2u, 3u, 8u}) CHECK(topk_search(store, query, k, threads) == serial);
  }
}

TEST_CASE("results do not depend on how rows are sharded") {
  Rng rng(4);
  const Instance inst = random_instance(rng, 97, 16);
  std::vector<double> query(16);
  for (double& x : query) x = rng.normal();
  std::vector<SearchHit> reference;
  for (std::size_t shard_size : {1u, 5u, 32u, 97u, 1000u}) {
    TempDir dir("partition_" + std::to_string(shard_size));
    const auto store = EmbeddingStore::build(inst.vectors, inst.ids, shard_size, dir.path);
    const auto hits = topk_search(store, query, 20, 2);
    if (reference.empty()) reference = hits;
    CHECK(hits == reference);
  }
}

TEST_CASE("topk_search argument checks") {
  TempDir dir("topk_args");
  const auto store = EmbeddingStore::build({{1, 0}, {0, 1}}, {"a", "b"}, 8, dir.path);
  CHECK_THROWS_AS(topk_search(store, std::vector<double>{1, 0, 0}, 1), ShapeError);
  CHECK_THROWS_AS(topk_search(store, std::vector<double>{1, 0}, 0), ArgumentError);
  CHECK_THROWS_AS(topk_search(store, std::vector<double>{0, 0}, 1), ArgumentError);
  const auto hits = topk_search(store, std::vector<double>{1, 1}, 5);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].id == "a");
  CHECK(hits[0].score == hits[1].score);
}

TEST_CASE("multi_conformer_score takes the best conformer") {
  const std::vector<double> pocket = {1, 0, 0};
  CHECK(multi_conformer_score(pocket, {{0, 1, 0}, {1, 1, 0}, {-1, 0, 0}}) ==
        doctest::Approx(std::sqrt(0.5)));
  CHECK(multi_conformer_score(pocket, {{0, 0, 3}}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(multi_conformer_score(pocket, {}), ArgumentError);
}

TEST_CASE("morgan_baseline_search") {
  const auto fp = [](const char* s) { return chem::morgan_fingerprint(chem::parse_smiles(s)); };
  std::vector<std::pair<std::string, chem::Fingerprint>> lib = {
      {"z-ethanol", fp("CCO")}, {"benzene", fp("c1ccccc1")}, {"a-ethanol", fp("OCC")}, {"propanol", fp("CCCO")}};
  const auto hits = morgan_baseline_search(fp("CCO"), lib, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0] == SearchHit{"a-ethanol", 1.0});
  CHECK(hits[1] == SearchHit{"z-ethanol", 1.0});
  CHECK(hits[2].id == "propanol");
  CHECK(morgan_baseline_search(fp("CCO"), lib, 10).size() == 4);
}

TEST_CASE("nearest_neighbor_similarity") {
  const auto fp = [](const char* s) { return chem::morgan_fingerprint(chem::parse_smiles(s)); };
  const std::vector<chem::Fingerprint> catalog = {fp("CCO"), fp("c1ccccc1")};
  const std::vector<chem::Fingerprint> gen = {fp("OCC"), fp("c1ccccc1"), fp("CCCCCCN")};
  const auto s = nearest_neighbor_similarity(gen, catalog);
  REQUIRE(s.values.size() == 3);
  CHECK(s.values[0] == 1.0);
  CHECK(s.values[1] == 1.0);
  const double third = std::max(chem::tanimoto(gen[2], catalog[0]), chem::tanimoto(gen[2], catalog[1]));
  CHECK(s.values[2] == third);
  CHECK(third < 1.0);
  CHECK(s.mean == doctest::Approx((2.0 + third) / 3.0));
  CHECK(s.median == 1.0);
  CHECK(s.exact_fraction == doctest::Approx(2.0 / 3.0));
  CHECK(nearest_neighbor_similarity({}, catalog).values.empty());
  CHECK_THROWS_AS(nearest_neighbor_similarity(gen, {}), ArgumentError);
}
