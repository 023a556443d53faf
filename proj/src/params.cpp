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

#include "molspace/params.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "molspace/binary_io.hpp"
#include "molspace/error.hpp"

namespace molspace {

namespace io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace io

// ---------------------------------------------------------------------------
// ParamStore

ad::Tensor& ParamStore::add(std::string name, ad::Tensor value) {
  if (index_.count(name)) throw ArgumentError("params: duplicate name '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.back();
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("params: no tensor named '" + std::string(name) + "'");
  return it->second;
}

ad::Tensor& ParamStore::at(std::string_view name) { return values_[index_of(name)]; }

const ad::Tensor& ParamStore::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParamStore ParamStore::extract(std::string_view prefix) const {
  ParamStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].starts_with(prefix)) out.add(names_[i].substr(prefix.size()), values_[i]);
  }
  return out;
}

void ParamStore::merge(const ParamStore& other, std::string_view prefix) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    add(std::string(prefix) + other.name(i), other.value(i));
  }
}

BoundParams::BoundParams(ad::Tape& tape, const ParamStore& store, bool trainable)
    : tape_(&tape), store_(&store) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    vars_.push_back(trainable ? tape.parameter(store.value(i)) : tape.constant(store.value(i)));
  }
}

BoundParams::BoundParams(const ParamStore& store, std::vector<ad::Var> vars)
    : tape_(nullptr), store_(&store), vars_(std::move(vars)) {
  if (vars_.size() != store.size())
    throw ShapeError("BoundParams: " + std::to_string(vars_.size()) + " vars for " +
                     std::to_string(store.size()) + " parameters");
  if (!vars_.empty()) tape_ = &vars_.front().tape();
}

ad::Var BoundParams::operator[](std::string_view name) const {
  return vars_[store_->index_of(name)];
}

std::vector<ad::Tensor> BoundParams::grads() const {
  std::vector<ad::Tensor> g;
  g.reserve(vars_.size());
  for (const auto& v : vars_) g.push_back(tape_->grad(v));
  return g;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(ParamStore& params, const std::vector<ad::Tensor>& grads) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.value(i).shape(), 0.0);
      v_.emplace_back(params.value(i).shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter count changed between steps");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = params.value(i);
    const ad::Tensor& g = grads[i];
    if (g.shape() != p.shape() || m_[i].shape() != p.shape()) {
      throw ShapeError("adam: gradient shape " + ad::shape_str(g.shape()) + " for parameter '" +
                       params.name(i) + "' of shape " + ad::shape_str(p.shape()));
    }
    ad::Tensor& m = m_[i];
    ad::Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      p[k] -= config_.lr * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params) {
  io::ByteWriter w;
  w.put_bytes("CKPT", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const ad::Tensor& t = params.value(i);
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ArgumentError("checkpoint: name too long: " + name.substr(0, 32));
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw ArgumentError("checkpoint: rank too large for '" + name + "'");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(t.data().data(), t.size() * sizeof(double));
  }
  return std::move(w.bytes());
}

ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  io::ByteReader r(bytes.data(), bytes.size(), origin);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "CKPT") throw FormatError(origin, 0, "bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(origin, 0, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name(len, '\0');
    r.get_bytes(name.data(), len);
    const auto rank = r.get<std::uint8_t>();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    const std::size_t n = ad::shape_numel(shape);
    if (r.remaining() / sizeof(double) < n) {
      throw FormatError(origin, 0, "truncated payload for '" + name + "'");
    }
    std::vector<double> data(n);
    r.get_bytes(data.data(), n * sizeof(double));
    if (out.contains(name)) throw FormatError(origin, 0, "duplicate tensor '" + name + "'");
    out.add(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError(origin, 0, "trailing bytes after checkpoint");
  return out;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

ad::Tensor random_normal(const ad::Shape& shape, double stddev, Rng& rng) {
  ad::Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace molspace
