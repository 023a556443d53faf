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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "molspace/chem.hpp"

namespace molspace::retrieval {

struct SearchHit {
  std::string id;
  double score = 0.0;
  bool operator==(const SearchHit&) const = default;
};

/// Result order: score descending, then id ascending.
inline bool ranks_before(const SearchHit& a, const SearchHit& b) {
  return a.score != b.score ? a.score > b.score : a.id < b.id;
}

/// The one dot-product kernel used by every scan (and by the test oracle):
/// eight interleaved float accumulators combined pairwise.
float dot_f32(const float* a, const float* b, std::size_t n);

/// L2-normalised float copy. Throws ArgumentError for a zero or non-finite vector.
std::vector<float> normalized_f32(std::span<const double> v);

// ---------------------------------------------------------------------------
// Shards
//
// <name>.cse : "CSE1" | u32 version (1) | u32 dim | u64 count | count*dim f32, little endian
// <name>.ids : exactly `count` newline-terminated ids

class Shard {
 public:
  /// Memory-maps the vector block and reads the id sidecar.
  static Shard open(const std::filesystem::path& path);
  static void write(const std::filesystem::path& path, std::size_t dim, std::span<const float> data,
                    const std::vector<std::string>& ids);

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const float* row(std::size_t i) const { return data_ + i * dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  struct Mapping;
  std::shared_ptr<Mapping> mapping_;
  const float* data_ = nullptr;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::filesystem::path path_;
};

std::filesystem::path ids_path(const std::filesystem::path& shard_path);

class EmbeddingStore {
 public:
  /// Normalises every vector, writes shards of at most `shard_size` rows to
  /// `dir` as shard_00000.cse, shard_00001.cse, ... and opens the result.
  static EmbeddingStore build(const std::vector<std::vector<double>>& embeddings,
                              const std::vector<std::string>& ids, std::size_t shard_size,
                              const std::filesystem::path& dir);
  /// Opens every shard_*.cse in `dir` in name order. `check_norms` verifies
  /// the unit-norm invariant (1e-5) on every row.
  static EmbeddingStore open(const std::filesystem::path& dir, bool check_norms = true);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  const std::vector<Shard>& shards() const { return shards_; }

 private:
  std::vector<Shard> shards_;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
};

/// Exact top-k cosine search over all shards. `threads` > 1 scans row ranges
/// concurrently and merges deterministically; the result is identical to
/// the serial scan.
std::vector<SearchHit> topk_search(const EmbeddingStore& store, std::span<const double> query,
                                   std::size_t k, unsigned threads = 1);

/// Max cosine similarity over a molecule's conformer embeddings.
double multi_conformer_score(std::span<const double> pocket,
                             const std::vector<std::vector<double>>& conformers);

/// Top-k by Tanimoto, ties by id ascending.
std::vector<SearchHit> morgan_baseline_search(
    const chem::Fingerprint& query,
    const std::vector<std::pair<std::string, chem::Fingerprint>>& library, std::size_t k);

struct NeighborSummary {
  std::vector<double> values;  // per generated molecule
  double mean = 0.0;
  double median = 0.0;
  /// Fraction with nearest-neighbour similarity exactly 1.
  double exact_fraction = 0.0;
};

NeighborSummary nearest_neighbor_similarity(const std::vector<chem::Fingerprint>& generated,
                                            const std::vector<chem::Fingerprint>& catalog);

}  // namespace molspace::retrieval
