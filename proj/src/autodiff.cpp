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

#include "molspace/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "molspace/error.hpp"

namespace molspace::ad {

// ---------------------------------------------------------------------------
// Var / Tape

Tape& Var::tape() const {
  if (!tape_) throw ArgumentError("autodiff: Var is not attached to a tape");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

bool Var::requires_grad() const { return tape().requires_grad(id_); }

Var Tape::leaf(const Tensor* borrowed, Tensor owned, bool requires_grad) {
  const Tensor& v = borrowed ? *borrowed : owned;
  if (!v.all_finite()) throw NumericError("autodiff: non-finite leaf tensor");
  Node node;
  node.owned = std::move(owned);
  node.borrowed = borrowed;
  node.requires_grad = requires_grad;
  node.op = "leaf";
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Tensor& value) { return leaf(&value, Tensor(), true); }
Var Tape::constant(const Tensor& value) { return leaf(&value, Tensor(), false); }
Var Tape::constant(Tensor&& value) { return leaf(nullptr, std::move(value), false); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn,
                 const char* op) {
  if (backward_done_) {
    throw ArgumentError(std::string("autodiff: recording '") + op +
                        "' on a tape that already ran backward");
  }
  bool rg = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ArgumentError(std::string("autodiff: '") + op + "' mixes tapes");
    rg = rg || requires_grad(v.id());
  }
  if (!value.all_finite()) {
    throw NumericError(std::string("autodiff: non-finite output from '") + op + "'");
  }
  Node node;
  node.owned = std::move(value);
  node.requires_grad = rg;
  if (rg) node.backward = std::move(fn);
  node.op = op;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_acc(std::size_t id) {
  Tensor& g = grads_[id];
  if (g.size() == 0 && shape_numel(value(id).shape()) != 0) g = Tensor(value(id).shape(), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ArgumentError("autodiff: loss belongs to another tape");
  if (backward_done_) {
    throw ArgumentError("autodiff: backward called twice without a new forward pass");
  }
  if (value(loss.id()).size() != 1) {
    throw ShapeError("autodiff: backward needs a scalar loss, got " +
                     shape_str(value(loss.id()).shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), Tensor());
  if (!requires_grad(loss.id())) return;
  grad_acc(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || grads_[i].size() == 0) continue;
    n.backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  if (!backward_done_) throw ArgumentError("autodiff: grad() before backward()");
  const Tensor& g = grads_.at(v.id());
  if (g.size() == 0) return Tensor(value(v.id()).shape(), 0.0);
  return g;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  Tape& t = a.tape();
  if (&b.tape() != &t) throw ArgumentError(std::string("autodiff: '") + op + "' mixes tapes");
  return t;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<long>(small.size()));
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  if (!b.shape().empty() && is_suffix(b.shape(), a.shape())) return;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not compatible");
}

template <typename F, typename G>
Var unary(Var a, const char* op, F forward, G dfdx_from_xy) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, dfdx_from_xy](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx_from_xy(x[i], y[i]);
      },
      op);
}

struct AxisSplit {
  std::size_t outer, mid, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  check_broadcast(x, y, "add");
  Tensor out = x;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i % n];
  return t.record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_acc(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_acc(ib);
          const std::size_t n = gb.size();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
      },
      "add");
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  check_broadcast(x, y, "sub");
  Tensor out = x;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i % n];
  return t.record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_acc(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_acc(ib);
          const std::size_t n = gb.size();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] -= g[i];
        }
      },
      "sub");
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  check_broadcast(x, y, "mul");
  Tensor out = x;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i % n];
  return t.record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        const std::size_t n = y.size();
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_acc(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i % n];
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_acc(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i] * x[i];
        }
      },
      "mul");
}

Var scale(Var a, Var s) {
  Tape& t = same_tape(a, s, "scale");
  if (s.value().size() != 1) {
    throw ShapeError("scale: factor must have one element, got " + shape_str(s.shape()));
  }
  const double f = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.vec()) v *= f;
  return t.record(
      std::move(out), {a, s},
      [ia = a.id(), is = s.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& x = t.value(ia);
        const double f = t.value(is)[0];
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_acc(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
        }
        if (t.requires_grad(is)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
          t.grad_acc(is)[0] += acc;
        }
      },
      "scale");
}

Var mul_const(Var a, double c) {
  return unary(a, "mul_const", [c](double x) { return x * c; },
               [c](double, double) { return c; });
}

Var add_const(Var a, double c) {
  return unary(a, "add_const", [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var silu(Var a) {
  return unary(a, "silu", [](double x) { return x * sigmoid_scalar(x); },
               [](double x, double) {
                 const double s = sigmoid_scalar(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (w.rank() != 2 || x.rank() < 1 || x.cols() != w.dim(0)) {
    throw ShapeError("matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.dim(1);
  Shape os = x.shape();
  os.back() = n;
  Tensor out(os, 0.0);
  const double* xp = x.data().data();
  const double* wp = w.data().data();
  double* op = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = op + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xp[i * k + p];
      if (xv == 0.0) continue;
      const double* wrow = wp + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * wrow[j];
    }
  }
  return t.record(
      std::move(out), {a, b},
      [ia = a.id(), ib = b.id(), m, k, n](Tape& t, std::size_t self) {
        const double* g = t.grad_in(self).data().data();
        const double* xp = t.value(ia).data().data();
        const double* wp = t.value(ib).data().data();
        if (t.requires_grad(ia)) {
          double* ga = t.grad_acc(ia).data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* wrow = wp + p * n;
              const double* grow = g + i * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (t.requires_grad(ib)) {
          double* gb = t.grad_acc(ib).data().data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = xp[i * k + p];
              if (xv == 0.0) continue;
              double* gbrow = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += xv * grow[j];
            }
          }
        }
      },
      "matmul");
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw ShapeError("transpose: rank-2 input required, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      },
      "transpose");
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.vec());
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape os = s0;
  os[axis] = 0;
  std::vector<std::size_t> mids;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ArgumentError("autodiff: 'concat' mixes tapes");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(s0));
    mids.push_back(s[axis]);
    os[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(os, axis);
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    const std::size_t chunk = mids[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(x.data().data() + o * chunk, chunk,
                  out.data().data() + o * sp.mid * sp.inner + off);
    }
    off += chunk;
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(
      std::move(out), std::span<const Var>(parts),
      [ids, mids, sp](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t chunk = mids[k] * sp.inner;
          if (t.requires_grad(ids[k])) {
            Tensor& ga = t.grad_acc(ids[k]);
            for (std::size_t o = 0; o < sp.outer; ++o) {
              const double* src = g.data().data() + o * sp.mid * sp.inner + off;
              double* dst = ga.data().data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          off += chunk;
        }
      },
      "concat");
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& x = a.value();
  if (axis >= x.rank() || start + len > x.dim(axis) || len == 0) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") of " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape os = x.shape();
  os[axis] = len;
  Tensor out(os);
  const std::size_t chunk = len * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data().data() + o * sp.mid * sp.inner + start * sp.inner, chunk,
                out.data().data() + o * chunk);
  }
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), sp, start, chunk](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          double* dst = ga.data().data() + o * sp.mid * sp.inner + start * sp.inner;
          const double* src = g.data().data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  const Tensor& w = table.value();
  if (w.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
  const std::size_t v = w.dim(0), d = w.dim(1);
  Tensor out({ids.size(), d});
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw ShapeError("embedding_lookup: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(v));
    }
    std::copy_n(w.data().data() + idx[i] * d, d, out.data().data() + i * d);
  }
  return table.tape().record(
      std::move(out), {table},
      [it = table.id(), idx = std::move(idx), d](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        Tensor& gw = t.grad_acc(it);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          double* dst = gw.data().data() + idx[i] * d;
          const double* src = g.data().data() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "embedding_lookup");
}

// ---------------------------------------------------------------------------
// Normalisations

Var softmax_lastdim(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data().data() + i * c;
    double* yr = out.data().data() + i * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
      },
      "softmax_lastdim");
}

Var causal_softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rank() < 2 || x.dim(x.rank() - 1) != x.dim(x.rank() - 2)) {
    throw ShapeError("causal_softmax: square trailing block required, got " + shape_str(x.shape()));
  }
  const std::size_t T = x.cols();
  const std::size_t r = x.rows();
  Tensor out(x.shape(), 0.0);
  for (std::size_t row = 0; row < r; ++row) {
    const std::size_t i = row % T;
    const double* xr = x.data().data() + row * T;
    double* yr = out.data().data() + row * T;
    const double mx = *std::max_element(xr, xr + i + 1);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j <= i; ++j) yr[j] /= z;
  }
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), r, T](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t row = 0; row < r; ++row) {
          const std::size_t i = row % T;
          const std::size_t base = row * T;
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dot += g[base + j] * y[base + j];
          for (std::size_t j = 0; j <= i; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
        }
      },
      "causal_softmax");
}

Var layernorm(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  std::vector<double> inv_sigma(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xr[j] - mu) * inv_sigma[i];
  }
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), r, c, inv_sigma = std::move(inv_sigma)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_acc(ia);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            mg += g[i * c + j];
            mgy += g[i * c + j] * y[i * c + j];
          }
          mg *= inv_c;
          mgy *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            ga[i * c + j] += inv_sigma[i] * (g[i * c + j] - mg - y[i * c + j] * mgy);
          }
        }
      },
      "layernorm");
}

Var normalize_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw NumericError("normalize_rows: zero row " + std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return a.tape().record(
      std::move(out), {a},
      [ia = a.id(), r, c, norms = std::move(norms)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_acc(ia);
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            ga[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
          }
        }
      },
      "normalize_rows");
}

// ---------------------------------------------------------------------------
// Losses and reductions

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  const Tensor& x = logits.value();
  if (x.rank() != 2) throw ShapeError("cross_entropy: logits must be rank 2");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (targets.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(r) + " rows");
  }
  std::vector<int> tg(targets.begin(), targets.end());
  Tensor probs({r, c});
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    if (tg[i] < 0 || static_cast<std::size_t>(tg[i]) >= c) {
      throw ShapeError("cross_entropy: target " + std::to_string(tg[i]) + " outside " +
                       std::to_string(c) + " classes");
    }
    const double* xr = x.data().data() + i * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    out[i] = (mx + std::log(z)) - xr[tg[i]];
  }
  return logits.tape().record(
      std::move(out), {logits},
      [il = logits.id(), tg = std::move(tg), probs = std::move(probs), r, c](Tape& t,
                                                                             std::size_t self) {
        const Tensor& g = t.grad_in(self);
        Tensor& gl = t.grad_acc(il);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g[i] * probs[i * c + j];
          gl[i * c + tg[i]] -= g[i];
        }
      },
      "cross_entropy");
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  return mean(cross_entropy_rows(logits, targets));
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.vec()) s += v;
  return a.tape().record(
      Tensor::scalar(s), {a},
      [ia = a.id()](Tape& t, std::size_t self) {
        const double g = t.grad_in(self)[0];
        for (double& v : t.grad_acc(ia).vec()) v += g;
      },
      "sum");
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return mul_const(sum(a), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Vector features

namespace {
void check_vector_stream(const Tensor& v, std::size_t channels, const char* op) {
  if (v.rank() != 2 || channels == 0 || v.dim(1) != 3 * channels) {
    throw ShapeError(std::string(op) + ": expected [M, 3*" + std::to_string(channels) + "], got " +
                     shape_str(v.shape()));
  }
}
}  // namespace

Var channel_norms(Var v, std::size_t channels, double eps) {
  const Tensor& x = v.value();
  check_vector_stream(x, channels, "channel_norms");
  const std::size_t m = x.dim(0), c = channels;
  Tensor out({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = eps;
      for (std::size_t ax = 0; ax < 3; ++ax) {
        const double e = x[i * 3 * c + ax * c + ch];
        s += e * e;
      }
      out[i * c + ch] = std::sqrt(s);
    }
  }
  return v.tape().record(
      std::move(out), {v},
      [iv = v.id(), m, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& n = t.value(self);
        const Tensor& x = t.value(iv);
        Tensor& gv = t.grad_acc(iv);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t ax = 0; ax < 3; ++ax) {
              const std::size_t k = i * 3 * c + ax * c + ch;
              gv[k] += g[i * c + ch] * x[k] / n[i * c + ch];
            }
      },
      "channel_norms");
}

Var channel_normalize(Var v, std::size_t channels, double eps) {
  const Tensor& x = v.value();
  check_vector_stream(x, channels, "channel_normalize");
  const std::size_t m = x.dim(0), c = channels;
  Tensor norms({m, c});
  std::vector<double> mean_norm(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = eps;
      for (std::size_t ax = 0; ax < 3; ++ax) {
        const double e = x[i * 3 * c + ax * c + ch];
        s += e * e;
      }
      norms[i * c + ch] = std::sqrt(s);
      mean_norm[i] += norms[i * c + ch];
    }
    mean_norm[i] /= static_cast<double>(c);
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < 3 * c; ++k) out[i * 3 * c + k] = x[i * 3 * c + k] / mean_norm[i];
  return v.tape().record(
      std::move(out), {v},
      [iv = v.id(), m, c, norms = std::move(norms), mean_norm = std::move(mean_norm)](
          Tape& t, std::size_t self) {
        const Tensor& g = t.grad_in(self);
        const Tensor& x = t.value(iv);
        Tensor& gv = t.grad_acc(iv);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < m; ++i) {
          const double mn = mean_norm[i];
          double gx = 0.0;
          for (std::size_t k = 0; k < 3 * c; ++k) gx += g[i * 3 * c + k] * x[i * 3 * c + k];
          const double coef = gx / (mn * mn) * inv_c;
          for (std::size_t ax = 0; ax < 3; ++ax)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t k = i * 3 * c + ax * c + ch;
              gv[k] += g[k] / mn - coef * x[k] / norms[i * c + ch];
            }
        }
      },
      "channel_normalize");
}

}  // namespace molspace::ad
