// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/autodiff.hpp"
#include "molf/hash.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace molf {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace molf

namespace molf::ad {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;

template <class T>
MapM<T> as_mat(Tensor<T>& t) {
  return MapM<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}
template <class T>
CMapM<T> as_mat(const Tensor<T>& t) {
  return CMapM<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_to_string(a) +
                      " vs " + shape_to_string(b));
}

void require_matrix(const Shape& s, const char* op) {
  require(s.size() == 2, std::string(op) + ": expected a matrix, got " +
                             shape_to_string(s));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

template <class T>
Parameter<T>& ParameterStore<T>::add(std::string name, Tensor<T> value,
                                     std::string group) {
  require(!index_.contains(name), "parameter store: duplicate name " + name);
  const std::size_t id = params_.size();
  index_.emplace(name, id);
  params_.push_back(std::make_unique<Parameter<T>>(id, std::move(name),
                                                   std::move(value),
                                                   std::move(group)));
  return *params_.back();
}

template <class T>
Parameter<T>* ParameterStore<T>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <class T>
Parameter<T>& ParameterStore<T>::at(std::string_view name) {
  auto* p = find(name);
  if (!p) throw ConfigError("parameter store: no parameter named " +
                            std::string(name));
  return *p;
}

template <class T>
const Parameter<T>& ParameterStore<T>::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw ConfigError("parameter store: no parameter named " +
                            std::string(name));
  return *p;
}

template <class T>
std::size_t ParameterStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().size();
  return n;
}

template <class T>
std::size_t ParameterStore<T>::numel(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->name().starts_with(prefix)) n += p->value().size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <class T>
void ParameterStore<T>::set_frozen(bool frozen) {
  for (auto& p : params_) p->set_frozen(frozen);
}

template <class T>
void ParameterStore<T>::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_)
    if (p->name().starts_with(prefix)) p->set_frozen(frozen);
}

template <class T>
template <class U>
void ParameterStore<T>::assign_from(const ParameterStore<U>& other) {
  for (auto& p : params_) {
    const auto* src = other.find(p->name());
    if (!src)
      throw ConfigError("parameter store: source lacks " + p->name());
    if (src->value().shape() != p->value().shape())
      throw ConfigError("parameter store: shape mismatch for " + p->name() +
                        ": " + shape_to_string(src->value().shape()) +
                        " vs " + shape_to_string(p->value().shape()));
    p->value() = src->value().template cast<T>();
    p->set_frozen(src->frozen());
  }
}

template <class T>
template <class U>
ParameterStore<U> ParameterStore<T>::converted() const {
  ParameterStore<U> out;
  for (const auto& p : params_) {
    auto& q = out.add(p->name(), p->value().template cast<U>(), p->group());
    q.set_frozen(p->frozen());
  }
  return out;
}

template <class T>
std::uint64_t ParameterStore<T>::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    h = fnv1a(p->name().data(), p->name().size(), h);
    for (auto d : p->value().shape()) {
      const std::uint64_t d64 = d;
      h = fnv1a(&d64, sizeof d64, h);
    }
    h = fnv1a(p->value().data(), p->value().size() * sizeof(T), h);
  }
  return h;
}

template <class T>
std::map<std::size_t, Tensor<T>> ParameterStore<T>::gradient_map() const {
  std::map<std::size_t, Tensor<T>> out;
  for (const auto& p : params_) out.emplace(p->id(), p->grad());
  return out;
}

// ---------------------------------------------------------------------------
// Graph

template <class T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

template <class T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <class T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(p.id()); it != param_nodes_.end() &&
                                           nodes_[it->second].param == &p)
    return Var<T>(this, it->second);
  Node n;
  n.value = p.value();
  n.op = "parameter";
  n.requires_grad = grad_enabled_ && !p.frozen();
  n.param = &p;
  auto v = push(std::move(n));
  param_nodes_[p.id()] = v.index();
  return v;
}

template <class T>
void Graph<T>::check_forward(const char* op, const Tensor<T>& value,
                             const std::vector<std::size_t>& inputs) const {
  if (!check_finite_ || value.all_finite()) return;
  for (auto i : inputs)
    if (!nodes_[i].value.all_finite()) return;  // propagated, not produced
  throw NumericError(std::string("forward: non-finite value produced by '") +
                     op + "' (node " + std::to_string(nodes_.size()) + ")");
}

template <class T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value,
                        std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::vector<Var<T>>(inputs),
                std::move(fn));
}

template <class T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value,
                        const std::vector<Var<T>>& inputs, BackwardFn fn) {
  std::vector<std::size_t> idx;
  idx.reserve(inputs.size());
  bool any_grad = false;
  for (const auto& v : inputs) {
    require(&v.graph() == this,
            std::string(op) + ": input belongs to another graph");
    idx.push_back(v.index());
    any_grad = any_grad || nodes_[v.index()].requires_grad;
  }
  check_forward(op, value, idx);
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = grad_enabled_ && any_grad;
  if (n.requires_grad) {
    n.backward = std::move(fn);
    n.inputs = std::move(idx);
  }
  return push(std::move(n));
}

template <class T>
Tensor<T>& Graph<T>::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <class T>
Tensor<T> Graph<T>::grad_of(const Var<T>& v) const {
  const Node& n = nodes_[v.index()];
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <class T>
void Graph<T>::backward(const Var<T>& loss) {
  require(&loss.graph() == this, "backward: loss belongs to another graph");
  require(loss.value().size() == 1,
          "backward: loss must be a scalar, got shape " +
              shape_to_string(loss.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  visits_ = 0;
  if (!nodes_[loss.index()].requires_grad) return;
  grad(loss.index())[0] = T{1};
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (!n.grad.all_finite())
      throw NumericError(std::string("backward: non-finite gradient at '") +
                         n.op + "' (node " + std::to_string(i) + ")");
    if (n.param) {
      auto& pg = n.param->grad();
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
    } else if (n.backward) {
      ++visits_;
      n.backward(*this);
      for (auto j : nodes_[i].inputs)
        if (nodes_[j].has_grad && !nodes_[j].grad.all_finite())
          throw NumericError(std::string("backward: '") + nodes_[i].op +
                             "' (node " + std::to_string(i) +
                             ") produced a non-finite gradient");
    }
  }
}

// ---------------------------------------------------------------------------
// Ops. Closures capture node indices, never references into nodes_.

namespace {

template <class T>
bool rg(Graph<T>& g, std::size_t i) {
  return g.requires_grad(i);
}

template <class T, class F>
Var<T> unary(const char* op, Var<T> a, F&& forward_fn,
             std::function<T(T x, T y)> dfdx) {
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward_fn(av[i]);
  const std::size_t ia = a.index();
  return g.record(op, std::move(out), {a},
                  [ia, dfdx, self = g.size()](Graph<T>& gr) {
                    const auto& x = gr.value(ia);
                    const auto& y = gr.value(self);
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t i = 0; i < gx.size(); ++i)
                      gx[i] += gy[i] * dfdx(x[i], y[i]);
                  });
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto& g = a.graph();
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.index(), ib = b.index();
  return g.record("add", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    for (auto in : {ia, ib}) {
                      if (!rg(gr, in)) continue;
                      auto& gx = gr.grad(in);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i];
                    }
                  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto& g = a.graph();
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.index(), ib = b.index();
  return g.record("sub", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    if (rg(gr, ia)) {
                      auto& gx = gr.grad(ia);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i];
                    }
                    if (rg(gr, ib)) {
                      auto& gx = gr.grad(ib);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] -= gy[i];
                    }
                  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  auto& g = a.graph();
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.index(), ib = b.index();
  return g.record("mul", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& av = gr.value(ia);
                    const auto& bv = gr.value(ib);
                    if (rg(gr, ia)) {
                      auto& gx = gr.grad(ia);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i] * bv[i];
                    }
                    if (rg(gr, ib)) {
                      auto& gx = gr.grad(ib);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i] * av[i];
                    }
                  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "div");
  auto& g = a.graph();
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  const auto ia = a.index(), ib = b.index();
  return g.record("div", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& y = gr.value(self);
                    const auto& bv = gr.value(ib);
                    if (rg(gr, ia)) {
                      auto& gx = gr.grad(ia);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i] / bv[i];
                    }
                    if (rg(gr, ib)) {
                      auto& gx = gr.grad(ib);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] -= gy[i] * y[i] / bv[i];
                    }
                  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  return unary<T>(
      "scale", a, [c](T x) { return c * x; },
      [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  return unary<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> square(Var<T> a) {
  return unary<T>(
      "square", a, [](T x) { return x * x; },
      [](T x, T) { return T{2} * x; });
}

template <class T>
Var<T> exp(Var<T> a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
  return unary<T>(
      "log", a, [](T x) { return std::log(x); },
      [](T x, T) { return T{1} / x; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> gelu(Var<T> a) {
  // tanh approximation
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) {
        return T(0.5) * x * (T{1} + std::tanh(k * (x + c * x * x * x)));
      },
      [](T x, T) {
        const T u = k * (x + c * x * x * x);
        const T th = std::tanh(u);
        const T du = k * (T{1} + T{3} * c * x * x);
        return T(0.5) * (T{1} + th) + T(0.5) * x * (T{1} - th * th) * du;
      });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T{1} : T{0}; });
}

template <class T>
Var<T> add_row(Var<T> x, Var<T> v) {
  require_matrix(x.shape(), "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  require(v.size() == n, "add_row: bias length " + std::to_string(v.size()) +
                             " does not match " + std::to_string(n));
  auto& g = x.graph();
  Tensor<T> out = x.value();
  const auto& vv = v.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += vv[c];
  const auto ix = x.index(), iv = v.index();
  return g.record("add_row", std::move(out), {x, v},
                  [ix, iv, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    if (rg(gr, ix)) {
                      auto& gx = gr.grad(ix);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i];
                    }
                    if (rg(gr, iv)) {
                      auto& gv = gr.grad(iv);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c)
                          gv[c] += gy[r * n + c];
                    }
                  });
}

template <class T>
Var<T> mul_col(Var<T> x, Var<T> s) {
  require_matrix(x.shape(), "mul_col");
  const std::size_t m = x.rows(), n = x.cols();
  require(s.size() == m, "mul_col: scale length mismatch");
  auto& g = x.graph();
  Tensor<T> out = x.value();
  const auto& sv = s.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= sv[r];
  const auto ix = x.index(), is = s.index();
  return g.record("mul_col", std::move(out), {x, s},
                  [ix, is, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& xv = gr.value(ix);
                    const auto& sv = gr.value(is);
                    if (rg(gr, ix)) {
                      auto& gx = gr.grad(ix);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c)
                          gx[r * n + c] += gy[r * n + c] * sv[r];
                    }
                    if (rg(gr, is)) {
                      auto& gs = gr.grad(is);
                      for (std::size_t r = 0; r < m; ++r) {
                        T acc{0};
                        for (std::size_t c = 0; c < n; ++c)
                          acc += gy[r * n + c] * xv[r * n + c];
                        gs[r] += acc;
                      }
                    }
                  });
}

template <class T>
Var<T> div_col(Var<T> x, Var<T> s) {
  require_matrix(x.shape(), "div_col");
  const std::size_t m = x.rows(), n = x.cols();
  require(s.size() == m, "div_col: divisor length mismatch");
  auto& g = x.graph();
  Tensor<T> out = x.value();
  const auto& sv = s.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= sv[r];
  const auto ix = x.index(), is = s.index();
  return g.record("div_col", std::move(out), {x, s},
                  [ix, is, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& y = gr.value(self);
                    const auto& sv = gr.value(is);
                    if (rg(gr, ix)) {
                      auto& gx = gr.grad(ix);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c)
                          gx[r * n + c] += gy[r * n + c] / sv[r];
                    }
                    if (rg(gr, is)) {
                      auto& gs = gr.grad(is);
                      for (std::size_t r = 0; r < m; ++r) {
                        T acc{0};
                        for (std::size_t c = 0; c < n; ++c)
                          acc += gy[r * n + c] * y[r * n + c];
                        gs[r] -= acc / sv[r];
                      }
                    }
                  });
}

template <class T>
Var<T> add_tiled_rows(Var<T> x, Var<T> pos) {
  require_matrix(x.shape(), "add_tiled_rows");
  require_matrix(pos.shape(), "add_tiled_rows");
  const std::size_t m = x.rows(), n = x.cols(), p = pos.rows();
  require(pos.cols() == n && p > 0 && m % p == 0,
          "add_tiled_rows: incompatible shapes " + shape_to_string(x.shape()) +
              " and " + shape_to_string(pos.shape()));
  auto& g = x.graph();
  Tensor<T> out = x.value();
  const auto& pv = pos.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += pv[(r % p) * n + c];
  const auto ix = x.index(), ip = pos.index();
  return g.record("add_tiled_rows", std::move(out), {x, pos},
                  [ix, ip, m, n, p, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    if (rg(gr, ix)) {
                      auto& gx = gr.grad(ix);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                        gx[i] += gy[i];
                    }
                    if (rg(gr, ip)) {
                      auto& gp = gr.grad(ip);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c)
                          gp[(r % p) * n + c] += gy[r * n + c];
                    }
                  });
}

template <class T>
Var<T> broadcast(Var<T> s, Shape shape) {
  require(s.size() == 1, "broadcast: source must be a scalar");
  auto& g = s.graph();
  Tensor<T> out(std::move(shape), s.value()[0]);
  const auto is = s.index();
  return g.record("broadcast", std::move(out), {s},
                  [is, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    T acc{0};
                    for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i];
                    gr.grad(is)[0] += acc;
                  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch " +
                                    shape_to_string(a.shape()) + " x " +
                                    shape_to_string(b.shape()));
  auto& g = a.graph();
  Tensor<T> out(Shape{a.rows(), b.cols()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  const auto ia = a.index(), ib = b.index();
  return g.record("matmul", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto gy = as_mat(gr.grad(self));
                    if (rg(gr, ia)) {
                      auto ga = as_mat(gr.grad(ia));
                      ga.noalias() += gy * as_mat(gr.value(ib)).transpose();
                    }
                    if (rg(gr, ib)) {
                      auto gb = as_mat(gr.grad(ib));
                      gb.noalias() += as_mat(gr.value(ia)).transpose() * gy;
                    }
                  });
}

template <class T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  require_matrix(a.shape(), "matmul_bt");
  require_matrix(b.shape(), "matmul_bt");
  require(a.cols() == b.cols(), "matmul_bt: inner dimension mismatch");
  auto& g = a.graph();
  Tensor<T> out(Shape{a.rows(), b.rows()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value()).transpose();
  const auto ia = a.index(), ib = b.index();
  return g.record("matmul_bt", std::move(out), {a, b},
                  [ia, ib, self = g.size()](Graph<T>& gr) {
                    const auto gy = as_mat(gr.grad(self));
                    if (rg(gr, ia)) {
                      auto ga = as_mat(gr.grad(ia));
                      ga.noalias() += gy * as_mat(gr.value(ib));
                    }
                    if (rg(gr, ib)) {
                      auto gb = as_mat(gr.grad(ib));
                      gb.noalias() += gy.transpose() * as_mat(gr.value(ia));
                    }
                  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require_matrix(x.shape(), "linear");
  require_matrix(w.shape(), "linear");
  require(x.cols() == w.rows(), "linear: input width " +
                                    std::to_string(x.cols()) +
                                    " does not match weight " +
                                    shape_to_string(w.shape()));
  require(b.size() == w.cols(), "linear: bias length mismatch");
  auto& g = x.graph();
  const std::size_t m = x.rows(), n = w.cols();
  Tensor<T> out(Shape{m, n});
  auto om = as_mat(out);
  om.noalias() = as_mat(x.value()) * as_mat(w.value());
  const auto& bv = b.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const auto ix = x.index(), iw = w.index(), ib = b.index();
  return g.record(
      "linear", std::move(out), {x, w, b},
      [ix, iw, ib, m, n, self = g.size()](Graph<T>& gr) {
        const auto& gyt = gr.grad(self);
        const auto gy = as_mat(gyt);
        if (rg(gr, ix)) {
          auto gx = as_mat(gr.grad(ix));
          gx.noalias() += gy * as_mat(gr.value(iw)).transpose();
        }
        if (rg(gr, iw)) {
          auto gw = as_mat(gr.grad(iw));
          gw.noalias() += as_mat(gr.value(ix)).transpose() * gy;
        }
        if (rg(gr, ib)) {
          auto& gb = gr.grad(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += gyt[r * n + c];
        }
      });
}

template <class T>
Var<T> sum(Var<T> a) {
  auto& g = a.graph();
  T acc{0};
  for (const T& v : a.value().values()) acc += v;
  const auto ia = a.index();
  return g.record("sum", Tensor<T>::scalar(acc), {a},
                  [ia, self = g.size()](Graph<T>& gr) {
                    const T gy = gr.grad(self)[0];
                    auto& gx = gr.grad(ia);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
                  });
}

template <class T>
Var<T> mean(Var<T> a) {
  require(a.size() > 0, "mean: empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
Var<T> row_sum(Var<T> a) {
  require_matrix(a.shape(), "row_sum");
  const std::size_t m = a.rows(), n = a.cols();
  auto& g = a.graph();
  Tensor<T> out(Shape{m, 1});
  const auto& av = a.value();
  for (std::size_t r = 0; r < m; ++r) {
    T acc{0};
    for (std::size_t c = 0; c < n; ++c) acc += av[r * n + c];
    out[r] = acc;
  }
  const auto ia = a.index();
  return g.record("row_sum", std::move(out), {a},
                  [ia, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t c = 0; c < n; ++c)
                        gx[r * n + c] += gy[r];
                  });
}

template <class T>
Var<T> col_sum(Var<T> a) {
  require_matrix(a.shape(), "col_sum");
  const std::size_t m = a.rows(), n = a.cols();
  auto& g = a.graph();
  Tensor<T> out(Shape{n});
  const auto& av = a.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += av[r * n + c];
  const auto ia = a.index();
  return g.record("col_sum", std::move(out), {a},
                  [ia, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t c = 0; c < n; ++c)
                        gx[r * n + c] += gy[c];
                  });
}

namespace {

template <class T>
void softmax_row(const T* in, T* out, std::size_t n) {
  T mx = in[0];
  for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
  T s{0};
  for (std::size_t c = 0; c < n; ++c) {
    out[c] = std::exp(in[c] - mx);
    s += out[c];
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= s;
}

}  // namespace

template <class T>
Var<T> softmax_rows(Var<T> a) {
  require_matrix(a.shape(), "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  require(n > 0, "softmax_rows: zero columns");
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < m; ++r)
    softmax_row(a.value().data() + r * n, out.data() + r * n, n);
  const auto ia = a.index();
  return g.record("softmax_rows", std::move(out), {a},
                  [ia, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& y = gr.value(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r) {
                      T dot{0};
                      for (std::size_t c = 0; c < n; ++c)
                        dot += gy[r * n + c] * y[r * n + c];
                      for (std::size_t c = 0; c < n; ++c)
                        gx[r * n + c] += y[r * n + c] * (gy[r * n + c] - dot);
                    }
                  });
}

template <class T>
Var<T> log_softmax_rows(Var<T> a) {
  require_matrix(a.shape(), "log_softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t r = 0; r < m; ++r) {
    T mx = av[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, av[r * n + c]);
    T s{0};
    for (std::size_t c = 0; c < n; ++c) s += std::exp(av[r * n + c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] - lse;
  }
  const auto ia = a.index();
  return g.record("log_softmax_rows", std::move(out), {a},
                  [ia, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const auto& y = gr.value(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r) {
                      T s{0};
                      for (std::size_t c = 0; c < n; ++c) s += gy[r * n + c];
                      for (std::size_t c = 0; c < n; ++c)
                        gx[r * n + c] +=
                            gy[r * n + c] - std::exp(y[r * n + c]) * s;
                    }
                  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_matrix(x.shape(), "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.size() == n && beta.size() == n,
          "layer_norm: affine parameters must have length " +
              std::to_string(n));
  auto& g = x.graph();
  Tensor<T> out(x.shape());
  // Saved per-row statistics: normalised input and inverse std.
  auto xhat = std::make_shared<std::vector<T>>(m * n);
  auto inv_std = std::make_shared<std::vector<T>>(m);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    T mu{0};
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) {
      const T d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (xv[r * n + c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = gv[c] * h + bv[c];
    }
  }
  const auto ix = x.index(), ig = gamma.index(), ib = beta.index();
  return g.record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [ix, ig, ib, m, n, xhat, inv_std, self = g.size()](Graph<T>& gr) {
        const auto& gy = gr.grad(self);
        const auto& gv = gr.value(ig);
        if (rg(gr, ig)) {
          auto& gg = gr.grad(ig);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c)
              gg[c] += gy[r * n + c] * (*xhat)[r * n + c];
        }
        if (rg(gr, ib)) {
          auto& gb = gr.grad(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += gy[r * n + c];
        }
        if (rg(gr, ix)) {
          auto& gx = gr.grad(ix);
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t r = 0; r < m; ++r) {
            T s1{0}, s2{0};
            for (std::size_t c = 0; c < n; ++c) {
              const T dh = gy[r * n + c] * gv[c];
              s1 += dh;
              s2 += dh * (*xhat)[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const T dh = gy[r * n + c] * gv[c];
              gx[r * n + c] += (*inv_std)[r] *
                               (dh - s1 * inv_n -
                                (*xhat)[r * n + c] * s2 * inv_n);
            }
          }
        }
      });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  require(shape_numel(shape) == a.size(),
          "reshape: element count mismatch " + shape_to_string(a.shape()) +
              " -> " + shape_to_string(shape));
  auto& g = a.graph();
  Tensor<T> out(std::move(shape), a.value().storage());
  const auto ia = a.index();
  return g.record("reshape", std::move(out), {a},
                  [ia, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t i = 0; i < gx.size(); ++i)
                      gx[i] += gy[i];
                  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths, idx;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.shape(), "concat_cols");
    require(p.rows() == m, "concat_cols: row count mismatch");
    widths.push_back(p.cols());
    idx.push_back(p.index());
    total += p.cols();
  }
  auto& g = parts[0].graph();
  Tensor<T> out(Shape{m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k],
                  out.data() + r * total + off);
    off += widths[k];
  }
  return g.record("concat_cols", std::move(out), parts,
                  [idx, widths, m, total, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < idx.size(); ++k) {
                      if (rg(gr, idx[k])) {
                        auto& gx = gr.grad(idx[k]);
                        for (std::size_t r = 0; r < m; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            gx[r * widths[k] + c] += gy[r * total + off + c];
                      }
                      off += widths[k];
                    }
                  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t len) {
  require_matrix(a.shape(), "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  require(start + len <= n, "slice_cols: range out of bounds");
  auto& g = a.graph();
  Tensor<T> out(Shape{m, len});
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.value().data() + r * n + start, len, out.data() + r * len);
  const auto ia = a.index();
  return g.record("slice_cols", std::move(out), {a},
                  [ia, m, n, start, len, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t c = 0; c < len; ++c)
                        gx[r * n + start + c] += gy[r * len + c];
                  });
}

template <class T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows) {
  require_matrix(a.shape(), "gather_rows");
  const std::size_t m = a.rows(), n = a.cols();
  for (auto r : rows) require(r < m, "gather_rows: row index out of range");
  auto& g = a.graph();
  Tensor<T> out(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.value().data() + rows[i] * n, n, out.data() + i * n);
  const auto ia = a.index();
  return g.record("gather_rows", std::move(out), {a},
                  [ia, rows, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t i = 0; i < rows.size(); ++i)
                      for (std::size_t c = 0; c < n; ++c)
                        gx[rows[i] * n + c] += gy[i * n + c];
                  });
}

template <class T>
Var<T> scatter_rows(Var<T> a, const std::vector<std::size_t>& rows,
                    std::size_t m) {
  require_matrix(a.shape(), "scatter_rows");
  require(rows.size() == a.rows(), "scatter_rows: index count mismatch");
  const std::size_t n = a.cols();
  for (auto r : rows) require(r < m, "scatter_rows: row index out of range");
  auto& g = a.graph();
  Tensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < n; ++c)
      out[rows[i] * n + c] += a.value()[i * n + c];
  const auto ia = a.index();
  return g.record("scatter_rows", std::move(out), {a},
                  [ia, rows, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t i = 0; i < rows.size(); ++i)
                      for (std::size_t c = 0; c < n; ++c)
                        gx[i * n + c] += gy[rows[i] * n + c];
                  });
}

template <class T>
Var<T> gather_cols(Var<T> a, const std::vector<std::size_t>& idx,
                   std::size_t k) {
  require_matrix(a.shape(), "gather_cols");
  const std::size_t m = a.rows(), n = a.cols();
  require(idx.size() == m * k, "gather_cols: index count mismatch");
  for (auto c : idx) require(c < n, "gather_cols: column out of range");
  auto& g = a.graph();
  Tensor<T> out(Shape{m, k});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j)
      out[r * k + j] = a.value()[r * n + idx[r * k + j]];
  const auto ia = a.index();
  return g.record("gather_cols", std::move(out), {a},
                  [ia, idx, m, n, k, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < k; ++j)
                        gx[r * n + idx[r * k + j]] += gy[r * k + j];
                  });
}

template <class T>
Var<T> scatter_cols(Var<T> a, const std::vector<std::size_t>& idx,
                    std::size_t n) {
  require_matrix(a.shape(), "scatter_cols");
  const std::size_t m = a.rows(), k = a.cols();
  require(idx.size() == m * k, "scatter_cols: index count mismatch");
  for (auto c : idx) require(c < n, "scatter_cols: column out of range");
  auto& g = a.graph();
  Tensor<T> out(Shape{m, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j)
      out[r * n + idx[r * k + j]] += a.value()[r * k + j];
  const auto ia = a.index();
  return g.record("scatter_cols", std::move(out), {a},
                  [ia, idx, m, n, k, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    auto& gx = gr.grad(ia);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < k; ++j)
                        gx[r * k + j] += gy[r * n + idx[r * k + j]];
                  });
}

template <class T>
Var<T> replace_rows(Var<T> x, const std::vector<std::uint8_t>& mask,
                    Var<T> v) {
  require_matrix(x.shape(), "replace_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require(mask.size() == m, "replace_rows: mask length mismatch");
  require(v.size() == n, "replace_rows: replacement width mismatch");
  auto& g = x.graph();
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < m; ++r)
    if (mask[r]) std::copy_n(v.value().data(), n, out.data() + r * n);
  const auto ix = x.index(), iv = v.index();
  return g.record("replace_rows", std::move(out), {x, v},
                  [ix, iv, mask, m, n, self = g.size()](Graph<T>& gr) {
                    const auto& gy = gr.grad(self);
                    const bool gxr = rg(gr, ix), gvr = rg(gr, iv);
                    for (std::size_t r = 0; r < m; ++r) {
                      if (mask[r]) {
                        if (!gvr) continue;
                        auto& gv = gr.grad(iv);
                        for (std::size_t c = 0; c < n; ++c)
                          gv[c] += gy[r * n + c];
                      } else if (gxr) {
                        auto& gx = gr.grad(ix);
                        for (std::size_t c = 0; c < n; ++c)
                          gx[r * n + c] += gy[r * n + c];
                      }
                    }
                  });
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads,
                 const Segments& q_segments, const Segments& kv_segments,
                 std::vector<Tensor<T>>* weights) {
  require_matrix(q.shape(), "attention");
  require_matrix(k.shape(), "attention");
  require_matrix(v.shape(), "attention");
  const std::size_t d = q.cols(), dv = v.cols();
  require(heads > 0 && d % heads == 0 && dv % heads == 0,
          "attention: width " + std::to_string(d) +
              " not divisible by head count " + std::to_string(heads));
  require(k.cols() == d, "attention: query/key width mismatch");
  require(k.rows() == v.rows(), "attention: key/value length mismatch");
  require(q_segments.size() == kv_segments.size(),
          "attention: segment count mismatch");
  std::size_t sq = 0, sk = 0;
  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    require(kv_segments[s] > 0 || q_segments[s] == 0,
            "attention: empty context for a non-empty query segment");
    sq += q_segments[s];
    sk += kv_segments[s];
  }
  require(sq == q.rows() && sk == k.rows(),
          "attention: segments do not cover the inputs");

  const std::size_t dh = d / heads, dvh = dv / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  auto& g = q.graph();
  Tensor<T> out(Shape{q.rows(), dv});
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(q_segments.size() * heads);

  const auto qm = as_mat(q.value());
  const auto km = as_mat(k.value());
  const auto vm = as_mat(v.value());
  auto om = as_mat(out);
  std::size_t q0 = 0, k0 = 0;
  for (std::size_t s = 0; s < q_segments.size(); ++s) {
    const auto lq = static_cast<Eigen::Index>(q_segments[s]);
    const auto lk = static_cast<Eigen::Index>(kv_segments[s]);
    for (std::size_t h = 0; h < heads; ++h) {
      Mat<T> a;
      if (lk == 1) {
        a = Mat<T>::Ones(lq, 1);
      } else {
        a = sc * (qm.block(q0, h * dh, lq, dh) *
                  km.block(k0, h * dh, lk, dh).transpose());
        for (Eigen::Index r = 0; r < lq; ++r)
          softmax_row(a.data() + r * lk, a.data() + r * lk,
                      static_cast<std::size_t>(lk));
      }
      om.block(q0, h * dvh, lq, dvh).noalias() =
          a * vm.block(k0, h * dvh, lk, dvh);
      if (weights)
        weights->push_back(Tensor<T>(
            Shape{static_cast<std::size_t>(lq), static_cast<std::size_t>(lk)},
            std::vector<T>(a.data(), a.data() + a.size())));
      probs->push_back(std::move(a));
    }
    q0 += static_cast<std::size_t>(lq);
    k0 += static_cast<std::size_t>(lk);
  }

  const auto iq = q.index(), ik = k.index(), iv = v.index();
  return g.record(
      "attention", std::move(out), {q, k, v},
      [iq, ik, iv, heads, dh, dvh, sc, q_segments, kv_segments, probs,
       self = g.size()](Graph<T>& gr) {
        const auto gy = as_mat(gr.grad(self));
        const auto qm = as_mat(gr.value(iq));
        const auto km = as_mat(gr.value(ik));
        const auto vm = as_mat(gr.value(iv));
        const bool gq = rg(gr, iq), gk = rg(gr, ik), gv = rg(gr, iv);
        std::size_t q0 = 0, k0 = 0, p = 0;
        for (std::size_t s = 0; s < q_segments.size(); ++s) {
          const auto lq = static_cast<Eigen::Index>(q_segments[s]);
          const auto lk = static_cast<Eigen::Index>(kv_segments[s]);
          for (std::size_t h = 0; h < heads; ++h, ++p) {
            const Mat<T>& a = (*probs)[p];
            const auto go = gy.block(q0, h * dvh, lq, dvh);
            if (gv) {
              auto gvm = as_mat(gr.grad(iv));
              gvm.block(k0, h * dvh, lk, dvh).noalias() += a.transpose() * go;
            }
            // A single key gives a constant softmax: no score gradient.
            if (lk == 1 || (!gq && !gk)) continue;
            Mat<T> da = go * vm.block(k0, h * dvh, lk, dvh).transpose();
            for (Eigen::Index r = 0; r < lq; ++r) {
              T dot{0};
              for (Eigen::Index c = 0; c < lk; ++c) dot += da(r, c) * a(r, c);
              for (Eigen::Index c = 0; c < lk; ++c)
                da(r, c) = a(r, c) * (da(r, c) - dot) * sc;
            }
            if (gq) {
              auto gqm = as_mat(gr.grad(iq));
              gqm.block(q0, h * dh, lq, dh).noalias() +=
                  da * km.block(k0, h * dh, lk, dh);
            }
            if (gk) {
              auto gkm = as_mat(gr.grad(ik));
              gkm.block(k0, h * dh, lk, dh).noalias() +=
                  da.transpose() * qm.block(q0, h * dh, lq, dh);
            }
          }
          q0 += static_cast<std::size_t>(lq);
          k0 += static_cast<std::size_t>(lk);
        }
      });
}

// ---------------------------------------------------------------------------
// Explicit instantiation

#define MOLF_INSTANTIATE_OPS(T)                                              \
  template class Parameter<T>;                                               \
  template class ParameterStore<T>;                                          \
  template class Graph<T>;                                                   \
  template Var<T> add<T>(Var<T>, Var<T>);                                    \
  template Var<T> sub<T>(Var<T>, Var<T>);                                    \
  template Var<T> mul<T>(Var<T>, Var<T>);                                    \
  template Var<T> div<T>(Var<T>, Var<T>);                                    \
  template Var<T> scale<T>(Var<T>, T);                                       \
  template Var<T> add_scalar<T>(Var<T>, T);                                  \
  template Var<T> square<T>(Var<T>);                                         \
  template Var<T> exp<T>(Var<T>);                                            \
  template Var<T> log<T>(Var<T>);                                            \
  template Var<T> relu<T>(Var<T>);                                           \
  template Var<T> gelu<T>(Var<T>);                                           \
  template Var<T> tanh<T>(Var<T>);                                           \
  template Var<T> clamp<T>(Var<T>, T, T);                                    \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                \
  template Var<T> mul_col<T>(Var<T>, Var<T>);                                \
  template Var<T> div_col<T>(Var<T>, Var<T>);                                \
  template Var<T> add_tiled_rows<T>(Var<T>, Var<T>);                         \
  template Var<T> broadcast<T>(Var<T>, Shape);                               \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                 \
  template Var<T> matmul_bt<T>(Var<T>, Var<T>);                              \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                         \
  template Var<T> sum<T>(Var<T>);                                            \
  template Var<T> mean<T>(Var<T>);                                           \
  template Var<T> row_sum<T>(Var<T>);                                        \
  template Var<T> col_sum<T>(Var<T>);                                        \
  template Var<T> softmax_rows<T>(Var<T>);                                   \
  template Var<T> log_softmax_rows<T>(Var<T>);                               \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                  \
  template Var<T> reshape<T>(Var<T>, Shape);                                 \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);           \
  template Var<T> gather_rows<T>(Var<T>, const std::vector<std::size_t>&);   \
  template Var<T> scatter_rows<T>(Var<T>, const std::vector<std::size_t>&,   \
                                  std::size_t);                              \
  template Var<T> gather_cols<T>(Var<T>, const std::vector<std::size_t>&,    \
                                 std::size_t);                               \
  template Var<T> scatter_cols<T>(Var<T>, const std::vector<std::size_t>&,   \
                                  std::size_t);                              \
  template Var<T> replace_rows<T>(Var<T>, const std::vector<std::uint8_t>&,  \
                                  Var<T>);                                   \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::size_t,          \
                               const Segments&, const Segments&,             \
                               std::vector<Tensor<T>>*);

MOLF_INSTANTIATE_OPS(float)
MOLF_INSTANTIATE_OPS(double)

template void ParameterStore<float>::assign_from<float>(
    const ParameterStore<float>&);
template void ParameterStore<float>::assign_from<double>(
    const ParameterStore<double>&);
template void ParameterStore<double>::assign_from<float>(
    const ParameterStore<float>&);
template void ParameterStore<double>::assign_from<double>(
    const ParameterStore<double>&);
template ParameterStore<float> ParameterStore<float>::converted<float>() const;
template ParameterStore<double> ParameterStore<float>::converted<double>()
    const;
template ParameterStore<float> ParameterStore<double>::converted<float>()
    const;
template ParameterStore<double> ParameterStore<double>::converted<double>()
    const;

}  // namespace molf::ad
