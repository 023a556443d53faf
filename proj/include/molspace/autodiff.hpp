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

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "molspace/tensor.hpp"

namespace molspace::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed ops. backward() walks it in exact reverse order.
///
/// Leaves registered with `parameter()` or `constant()` borrow the tensor, which
/// must outlive the tape. A tape supports one backward pass; record a fresh
/// forward (or call clear()) before differentiating again.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(const Tensor& value);
  Var constant(const Tensor& value);
  Var constant(Tensor&& value);

  /// Reverse pass from a single-element loss.
  void backward(Var loss);
  /// Gradient of a leaf or intermediate after backward(); zeros if unreachable.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Op-implementation interface.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn, const char* op);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn), op);
  }
  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Incoming gradient of node `id` during backward (allocated, possibly zero).
  const Tensor& grad_in(std::size_t id) const { return grads_[id]; }
  /// Accumulator for node `id`, zero-initialised on first touch.
  Tensor& grad_acc(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  Var leaf(const Tensor* borrowed, Tensor owned, bool requires_grad);

  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;
};

// Elementwise. `b` may match `a` exactly or match a trailing suffix of a's
// shape, in which case it is repeated over a's leading batch dims.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a * s where s holds a single element.
Var scale(Var a, Var s);
Var mul_const(Var a, double c);
Var add_const(Var a, double c);

Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var silu(Var a);
Var square(Var a);

/// [..., k] x [k, n] -> [..., n]
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len);
/// Row gather: out[i] = table[ids[i]] for a 2-D table.
Var embedding_lookup(Var table, std::span<const int> ids);

Var softmax_lastdim(Var a);
/// Softmax over the last dim of a square [.., T, T] block restricted to j <= i.
/// Entries above the diagonal are exactly zero.
Var causal_softmax(Var a);
/// Per-row normalisation of the last dim to zero mean and unit variance.
Var layernorm(Var a, double eps = 1e-9);
/// Per-row division by the L2 norm of the last dim.
Var normalize_rows(Var a);

/// Mean of per-row -log softmax(logits)[target].
Var cross_entropy(Var logits, std::span<const int> targets);
/// Per-row cross entropy as a rank-1 tensor.
Var cross_entropy_rows(Var logits, std::span<const int> targets);

Var sum(Var a);
Var mean(Var a);

// Vector-feature helpers. A vector stream is stored as [M, 3*c] with column
// index axis*c + channel.

/// Per-channel Euclidean norms sqrt(sum_axis v^2 + eps): [M, 3c] -> [M, c].
Var channel_norms(Var v, std::size_t channels, double eps = 1e-8);
/// Divide each row by its mean channel norm (+eps inside the sqrt).
Var channel_normalize(Var v, std::size_t channels, double eps = 1e-8);

}  // namespace molspace::ad
