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

#include "molspace/retrieval.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>
#include <thread>

#include "molspace/binary_io.hpp"
#include "molspace/contrastive.hpp"
#include "molspace/error.hpp"

namespace molspace::retrieval {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8;

}  // namespace

float dot_f32(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

std::vector<float> normalized_f32(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0) || !std::isfinite(n)) throw ArgumentError("cannot normalise a zero or non-finite vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

std::filesystem::path ids_path(const std::filesystem::path& shard_path) {
  auto p = shard_path;
  p.replace_extension(".ids");
  return p;
}

struct Shard::Mapping {
  void* base = nullptr;
  std::size_t length = 0;
  ~Mapping() {
    if (base) munmap(base, length);
  }
};

void Shard::write(const std::filesystem::path& path, std::size_t dim, std::span<const float> data,
                  const std::vector<std::string>& ids) {
  if (dim == 0 || data.size() != dim * ids.size())
    throw ShapeError("shard write: " + std::to_string(data.size()) + " floats for " +
                     std::to_string(ids.size()) + " rows of width " + std::to_string(dim));
  io::ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  w.put<std::uint64_t>(ids.size());
  w.put_bytes(data.data(), data.size() * sizeof(float));
  io::write_file(path, w.bytes());
  std::string text;
  for (const auto& id : ids) {
    if (id.empty() || id.find('\n') != std::string::npos)
      throw ArgumentError("shard ids must be non-empty single-line strings");
    text += id + "\n";
  }
  io::write_text(ids_path(path), text);
}

Shard Shard::open(const std::filesystem::path& path) {
  const std::string name = path.string();
  const int fd = ::open(name.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open " + name + ": " + std::strerror(errno));
  struct stat st{};
  if (fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoError("cannot stat " + name);
  }
  const auto length = static_cast<std::size_t>(st.st_size);
  if (length < kHeaderBytes) {
    ::close(fd);
    throw FormatError(name, 0, "truncated header");
  }
  void* base = mmap(nullptr, length, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (base == MAP_FAILED) throw IoError("cannot map " + name);
  Shard shard;
  shard.mapping_ = std::make_shared<Mapping>();
  shard.mapping_->base = base;
  shard.mapping_->length = length;
  shard.path_ = path;

  io::ByteReader r(static_cast<const std::uint8_t*>(base), kHeaderBytes, name);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(name, 0, "bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError(name, 0, "unsupported version " + std::to_string(version));
  shard.dim_ = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (shard.dim_ == 0) throw FormatError(name, 0, "zero dimension");
  if (length != kHeaderBytes + count * shard.dim_ * sizeof(float))
    throw FormatError(name, 0, "payload size does not match header");
  shard.data_ = reinterpret_cast<const float*>(static_cast<const std::uint8_t*>(base) + kHeaderBytes);

  const auto ids_file = ids_path(path);
  const auto bytes = io::read_file(ids_file);
  std::string text(bytes.begin(), bytes.end());
  if (!text.empty() && text.back() != '\n')
    throw FormatError(ids_file.string(), 0, "last id line is not newline-terminated");
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    shard.ids_.push_back(text.substr(start, end - start));
    if (shard.ids_.back().empty())
      throw FormatError(ids_file.string(), shard.ids_.size(), "empty id");
    start = end + 1;
  }
  if (shard.ids_.size() != count)
    throw FormatError(ids_file.string(), 0,
                      "expected " + std::to_string(count) + " ids, found " + std::to_string(shard.ids_.size()));
  return shard;
}

EmbeddingStore EmbeddingStore::build(const std::vector<std::vector<double>>& embeddings,
                                     const std::vector<std::string>& ids, std::size_t shard_size,
                                     const std::filesystem::path& dir) {
  if (embeddings.size() != ids.size()) throw ShapeError("build_store: one id per embedding required");
  if (embeddings.empty()) throw ArgumentError("build_store: no embeddings");
  if (shard_size == 0) throw ArgumentError("build_store: shard_size must be >= 1");
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw InvariantError("store.unique_ids", "duplicate id " + id);
  const std::size_t dim = embeddings.front().size();
  for (const auto& e : embeddings)
    if (e.size() != dim) throw ShapeError("build_store: embeddings differ in width");
  std::filesystem::create_directories(dir);
  std::size_t shard_index = 0;
  for (std::size_t start = 0; start < embeddings.size(); start += shard_size, ++shard_index) {
    const std::size_t end = std::min(embeddings.size(), start + shard_size);
    std::vector<float> block;
    block.reserve((end - start) * dim);
    for (std::size_t i = start; i < end; ++i) {
      try {
        const auto v = normalized_f32(embeddings[i]);
        block.insert(block.end(), v.begin(), v.end());
      } catch (const ArgumentError&) {
        throw InvariantError("store.unit_norm", "embedding " + ids[i] + " is a zero vector");
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "shard_%05zu.cse", shard_index);
    Shard::write(dir / name, dim, block,
                 std::vector<std::string>(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                          ids.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  return open(dir, false);
}

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& dir, bool check_norms) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) throw IoError("store directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("shard_") && entry.path().extension() == ".cse") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no shards in " + dir.string());
  EmbeddingStore store;
  std::set<std::string> seen;
  for (const auto& f : files) {
    Shard shard = Shard::open(f);
    if (store.shards_.empty()) store.dim_ = shard.dim();
    if (shard.dim() != store.dim_) throw FormatError(f.string(), 0, "dimension differs from first shard");
    for (const auto& id : shard.ids())
      if (!seen.insert(id).second) throw InvariantError("store.unique_ids", "duplicate id " + id);
    if (check_norms) {
      for (std::size_t i = 0; i < shard.count(); ++i) {
        const double n = std::sqrt(static_cast<double>(dot_f32(shard.row(i), shard.row(i), shard.dim())));
        if (!(std::abs(n - 1.0) <= 1e-5))
          throw InvariantError("store.unit_norm", "row " + shard.ids()[i] + " has norm " + std::to_string(n));
      }
    }
    store.size_ += shard.count();
    store.shards_.push_back(std::move(shard));
  }
  return store;
}

namespace {

struct Candidate {
  float score;
  const std::string* id;
};

bool better(const Candidate& a, const Candidate& b) {
  return a.score != b.score ? a.score > b.score : *a.id < *b.id;
}

/// Bounded heap whose front is the worst kept candidate.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }
  void offer(const Candidate& c) {
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), better);
    } else if (better(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
  }
  std::vector<Candidate>& items() { return heap_; }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

struct Range {
  std::size_t shard, begin, end;
};

void scan(const EmbeddingStore& store, const std::vector<Range>& ranges, const float* q, TopK& top) {
  for (const Range& r : ranges) {
    const Shard& s = store.shards()[r.shard];
    for (std::size_t i = r.begin; i < r.end; ++i) top.offer({dot_f32(q, s.row(i), s.dim()), &s.ids()[i]});
  }
}

}  // namespace

std::vector<SearchHit> topk_search(const EmbeddingStore& store, std::span<const double> query,
                                   std::size_t k, unsigned threads) {
  if (k == 0) throw ArgumentError("topk_search: k must be >= 1");
  if (query.size() != store.dim())
    throw ShapeError("topk_search: query width " + std::to_string(query.size()) + " != store width " +
                     std::to_string(store.dim()));
  const std::vector<float> q = normalized_f32(query);
  threads = std::max(1u, threads);

  // Split the concatenated row space into `threads` contiguous pieces.
  const std::size_t total = store.size();
  std::vector<std::vector<Range>> work(threads);
  const std::size_t per = (total + threads - 1) / threads;
  std::size_t global = 0;
  for (std::size_t s = 0; s < store.shards().size(); ++s) {
    const std::size_t count = store.shards()[s].count();
    std::size_t i = 0;
    while (i < count) {
      const std::size_t t = std::min<std::size_t>(global / std::max<std::size_t>(per, 1), threads - 1);
      const std::size_t room = (t + 1) * per - global;
      const std::size_t take = std::min(count - i, t == threads - 1 ? count - i : room);
      work[t].push_back({s, i, i + take});
      i += take;
      global += take;
    }
  }

  std::vector<TopK> partial(threads, TopK(k));
  if (threads == 1) {
    scan(store, work[0], q.data(), partial[0]);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] { scan(store, work[t], q.data(), partial[t]); });
    for (auto& th : pool) th.join();
  }
  std::vector<Candidate> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.items().begin(), p.items().end());
  std::sort(merged.begin(), merged.end(), better);
  if (merged.size() > k) merged.resize(k);
  std::vector<SearchHit> hits;
  hits.reserve(merged.size());
  for (const auto& c : merged) hits.push_back({*c.id, static_cast<double>(c.score)});
  return hits;
}

double multi_conformer_score(std::span<const double> pocket,
                             const std::vector<std::vector<double>>& conformers) {
  if (conformers.empty()) throw ArgumentError("multi_conformer_score: no conformers");
  double best = -INFINITY;
  for (const auto& c : conformers) best = std::max(best, contrastive::cosine_similarity(pocket, c));
  return best;
}

std::vector<SearchHit> morgan_baseline_search(
    const chem::Fingerprint& query,
    const std::vector<std::pair<std::string, chem::Fingerprint>>& library, std::size_t k) {
  if (k == 0) throw ArgumentError("morgan_baseline_search: k must be >= 1");
  std::vector<SearchHit> hits;
  hits.reserve(library.size());
  for (const auto& [id, fp] : library) hits.push_back({id, chem::tanimoto(query, fp)});
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
  hits.resize(keep);
  return hits;
}

NeighborSummary nearest_neighbor_similarity(const std::vector<chem::Fingerprint>& generated,
                                            const std::vector<chem::Fingerprint>& catalog) {
  if (catalog.empty()) throw ArgumentError("nearest_neighbor_similarity: empty catalog");
  NeighborSummary s;
  for (const auto& g : generated) {
    double best = 0.0;
    for (const auto& c : catalog) best = std::max(best, chem::tanimoto(g, c));
    s.values.push_back(best);
  }
  if (s.values.empty()) return s;
  double total = 0.0;
  std::size_t exact = 0;
  for (double v : s.values) {
    total += v;
    exact += v == 1.0;
  }
  const auto n = static_cast<double>(s.values.size());
  s.mean = total / n;
  s.exact_fraction = static_cast<double>(exact) / n;
  std::vector<double> sorted = s.values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  s.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  return s;
}

}  // namespace molspace::retrieval
