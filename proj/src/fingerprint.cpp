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
#include <bit>
#include <sstream>
#include <tuple>

#include "molspace/chem.hpp"
#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace::chem {

namespace {

constexpr std::uint64_t kSeed = 0x6d6f6c7370616365ULL;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t combine(std::uint64_t h, std::uint64_t v) { return mix(h ^ mix(v)); }

}  // namespace

Fingerprint::Fingerprint(std::size_t nbits, int radius) : nbits_(nbits), radius_(radius) {
  if (nbits == 0 || !std::has_single_bit(nbits) || nbits < 64)
    throw ArgumentError("fingerprint width must be a power of two >= 64, got " +
                        std::to_string(nbits));
  words_.assign(nbits / 64, 0);
}

std::size_t Fingerprint::popcount() const {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

// Hex digit k holds bits 4k..4k+3, lowest bit in the digit's least significant
// position.
std::string Fingerprint::to_hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(nbits_ / 4, '0');
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::uint64_t nibble = (words_[k / 16] >> ((k % 16) * 4)) & 0xF;
    out[k] = kDigits[nibble];
  }
  return out;
}

Fingerprint Fingerprint::from_hex(std::string_view hex, int radius) {
  Fingerprint fp(hex.size() * 4, radius);
  for (std::size_t k = 0; k < hex.size(); ++k) {
    const char c = hex[k];
    std::uint64_t v;
    if (c >= '0' && c <= '9') v = static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v = static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') v = static_cast<std::uint64_t>(c - 'A' + 10);
    else throw ParseError(k, "invalid hex digit");
    fp.words_[k / 16] |= v << ((k % 16) * 4);
  }
  return fp;
}

std::vector<std::vector<std::uint64_t>> morgan_environments(const MolGraph& graph, int radius) {
  if (radius < 0) throw ArgumentError("radius must be >= 0");
  const auto adj = graph.adjacency();
  const std::size_t n = graph.atoms.size();
  std::vector<std::vector<std::uint64_t>> rounds;
  std::vector<std::uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Atom& a = graph.atoms[i];
    std::uint64_t h = combine(kSeed, 0);
    h = combine(h, static_cast<std::uint64_t>(a.atomic_number));
    h = combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(a.charge)));
    h = combine(h, a.aromatic ? 1 : 0);
    h = combine(h, adj[i].size());
    h = combine(h, static_cast<std::uint64_t>(a.total_h()));
    ids[i] = h;
  }
  rounds.push_back(ids);
  for (int r = 1; r <= radius; ++r) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<std::uint64_t, std::uint64_t>> env;
      for (auto [nb, bond] : adj[i])
        env.emplace_back(static_cast<std::uint64_t>(graph.bonds[static_cast<std::size_t>(bond)].order),
                         ids[static_cast<std::size_t>(nb)]);
      std::sort(env.begin(), env.end());
      std::uint64_t h = combine(combine(kSeed, static_cast<std::uint64_t>(r)), ids[i]);
      h = combine(h, env.size());
      for (auto [order, id] : env) h = combine(combine(h, order), id);
      next[i] = h;
    }
    ids = next;
    rounds.push_back(ids);
  }
  return rounds;
}

Fingerprint morgan_fingerprint(const MolGraph& graph, int radius, std::size_t nbits) {
  Fingerprint fp(nbits, radius);
  for (const auto& round : morgan_environments(graph, radius))
    for (std::uint64_t id : round) fp.set(id & (nbits - 1));
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits() != b.nbits())
    throw ShapeError("fingerprint widths differ: " + std::to_string(a.nbits()) + " vs " +
                     std::to_string(b.nbits()));
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) {
    both += static_cast<std::size_t>(std::popcount(a.words()[i] & b.words()[i]));
    either += static_cast<std::size_t>(std::popcount(a.words()[i] | b.words()[i]));
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

double diversity(const std::vector<Fingerprint>& fps) {
  if (fps.size() < 2) throw ArgumentError("diversity needs at least two fingerprints");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < fps.size(); ++i)
    for (std::size_t j = i + 1; j < fps.size(); ++j) {
      total += tanimoto(fps[i], fps[j]);
      ++pairs;
    }
  return 1.0 - total / static_cast<double>(pairs);
}

void save_fingerprints(const std::vector<std::string>& ids, const std::vector<Fingerprint>& fps,
                       const std::filesystem::path& path) {
  if (ids.size() != fps.size()) throw ArgumentError("ids and fingerprints differ in length");
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) text += ids[i] + '\t' + fps[i].to_hex() + '\n';
  io::write_text(path, text);
}

std::vector<std::pair<std::string, Fingerprint>> load_fingerprints(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<std::pair<std::string, Fingerprint>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw FormatError(path.string(), lineno, "expected id<TAB>hex");
    try {
      out.emplace_back(line.substr(0, tab), Fingerprint::from_hex(line.substr(tab + 1)));
    } catch (const Error& e) {
      throw FormatError(path.string(), lineno, e.what());
    }
    if (!out.empty() && out.front().second.nbits() != out.back().second.nbits())
      throw FormatError(path.string(), lineno, "fingerprint width differs from the first line");
  }
  return out;
}

}  // namespace molspace::chem
