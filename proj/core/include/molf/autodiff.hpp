// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over a per-step tape.
//
// A Graph records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep that visits
// each node once. Parameters live outside the graph in a ParameterStore and
// receive accumulated gradients when backward() reaches their leaf nodes.
//
// All templates are explicitly instantiated for float (training) and double
// (gradient checking) in autodiff.cpp.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "molf/tensor.hpp"

namespace molf::ad {

template <class T>
class Graph;

template <class T>
class Parameter {
 public:
  Parameter(std::size_t id, std::string name, Tensor<T> value,
            std::string group)
      : id_(id),
        name_(std::move(name)),
        group_(std::move(group)),
        value_(std::move(value)),
        grad_(value_.shape()) {}

  std::size_t id() const { return id_; }
  const std::string& name() const { return name_; }
  // Optimizer group ("backbone", "gate", ...); selects the learning rate.
  const std::string& group() const { return group_; }

  Tensor<T>& value() { return value_; }
  const Tensor<T>& value() const { return value_; }
  Tensor<T>& grad() { return grad_; }
  const Tensor<T>& grad() const { return grad_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  void zero_grad() { grad_.fill(T{0}); }

 private:
  std::size_t id_;
  std::string name_;
  std::string group_;
  Tensor<T> value_;
  Tensor<T> grad_;
  bool frozen_ = false;
};

/// Owns parameters by name in registration order. Addresses are stable for
/// the store's lifetime, so modules keep raw pointers into it.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> value,
                    std::string group = "backbone");

  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  // Total scalar count.
  std::size_t numel() const;
  // Scalar count over names starting with prefix.
  std::size_t numel(std::string_view prefix) const;

  void zero_grad();
  void set_frozen(bool frozen);
  void set_frozen(std::string_view prefix, bool frozen);

  /// Copy values by name from another store (possibly of another precision).
  /// Every parameter of *this must exist in `other` with the same shape.
  template <class U>
  void assign_from(const ParameterStore<U>& other);

  /// Deep copy into a fresh store of the same or another precision.
  template <class U>
  ParameterStore<U> converted() const;

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  /// parameter id -> gradient copy; parameters that did not take part in the
  /// last backward() carry zero tensors.
  std::map<std::size_t, Tensor<T>> gradient_map() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t index) : graph_(g), index_(index) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t index_ = 0;
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  /// With grad disabled every node is a constant and no closures are kept.
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf that receives a gradient (used to differentiate w.r.t. inputs).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter. Frozen parameters act as constants.
  Var<T> param(Parameter<T>& p);

  /// Append an op node. `fn` runs during backward() when the node holds a
  /// gradient; it must only accumulate into inputs that require grad.
  Var<T> record(const char* op, Tensor<T> value,
                std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(const char* op, Tensor<T> value,
                const std::vector<Var<T>>& inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  const char* op(std::size_t i) const { return nodes_[i].op; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  /// Gradient accumulator of node i, allocated as zeros on first use.
  Tensor<T>& grad(std::size_t i);
  bool has_grad(std::size_t i) const { return nodes_[i].has_grad; }
  /// Gradient of a node after backward(); zeros if it received none.
  Tensor<T> grad_of(const Var<T>& v) const;

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Parameter::grad (callers zero them between steps).
  void backward(const Var<T>& loss);

  /// Nodes whose backward closure ran during the last backward().
  std::size_t last_backward_visits() const { return visits_; }

  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    const char* op = "";
    BackwardFn backward;
    std::vector<std::size_t> inputs;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Node node);
  void check_forward(const char* op, const Tensor<T>& value,
                     const std::vector<std::size_t>& inputs) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool check_finite_ = true;
  std::size_t visits_ = 0;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(index_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(index_);
}

/// Row partition of a token matrix into independent sequences.
using Segments = std::vector<std::size_t>;

inline Segments one_segment(std::size_t rows) { return Segments{rows}; }
inline Segments unit_segments(std::size_t rows) {
  return Segments(rows, 1);
}
inline Segments equal_segments(std::size_t count, std::size_t length) {
  return Segments(count, length);
}

// ---- element-wise -------------------------------------------------------
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> div(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T c);
template <class T> Var<T> add_scalar(Var<T> a, T c);
template <class T> Var<T> neg(Var<T> a) { return scale(a, T{-1}); }
template <class T> Var<T> square(Var<T> a);
template <class T> Var<T> exp(Var<T> a);
template <class T> Var<T> log(Var<T> a);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> gelu(Var<T> a);
template <class T> Var<T> tanh(Var<T> a);
/// Saturating clamp; gradient is zero outside [lo, hi].
template <class T> Var<T> clamp(Var<T> a, T lo, T hi);

// ---- broadcasting -------------------------------------------------------
/// x[m,n] + v[n] on every row.
template <class T> Var<T> add_row(Var<T> x, Var<T> v);
/// x[m,n] * s[m] per row (s may be [m] or [m,1]).
template <class T> Var<T> mul_col(Var<T> x, Var<T> s);
/// x[m,n] / s[m] per row.
template <class T> Var<T> div_col(Var<T> x, Var<T> s);
/// x[m,n] + pos[p,n] where row r receives pos[r % p].
template <class T> Var<T> add_tiled_rows(Var<T> x, Var<T> pos);
/// Scalar expanded to `shape`.
template <class T> Var<T> broadcast(Var<T> s, Shape shape);

// ---- linear algebra -----------------------------------------------------
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
/// a[m,k] * b[n,k]^T.
template <class T> Var<T> matmul_bt(Var<T> a, Var<T> b);
/// x[m,k] * w[k,n] + b[n].
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

// ---- reductions ---------------------------------------------------------
template <class T> Var<T> sum(Var<T> a);
template <class T> Var<T> mean(Var<T> a);
/// [m,n] -> [m,1]
template <class T> Var<T> row_sum(Var<T> a);
/// [m,n] -> [n]
template <class T> Var<T> col_sum(Var<T> a);

// ---- normalisation ------------------------------------------------------
template <class T> Var<T> softmax_rows(Var<T> a);
template <class T> Var<T> log_softmax_rows(Var<T> a);
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// ---- shape and indexing -------------------------------------------------
template <class T> Var<T> reshape(Var<T> a, Shape shape);
template <class T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <class T> Var<T> slice_cols(Var<T> a, std::size_t start,
                                     std::size_t len);
template <class T> Var<T> gather_rows(Var<T> a,
                                      const std::vector<std::size_t>& rows);
/// Inverse of gather_rows: rows of `a` land at `rows` in an [m, n] zero
/// matrix (duplicates accumulate).
template <class T> Var<T> scatter_rows(Var<T> a,
                                       const std::vector<std::size_t>& rows,
                                       std::size_t m);
/// out[r, j] = a[r, idx[r*k + j]].
template <class T> Var<T> gather_cols(Var<T> a,
                                      const std::vector<std::size_t>& idx,
                                      std::size_t k);
/// Inverse of gather_cols into an [m, n] zero matrix.
template <class T> Var<T> scatter_cols(Var<T> a,
                                       const std::vector<std::size_t>& idx,
                                       std::size_t n);
/// Rows flagged in `mask` are replaced by the vector `v`.
template <class T> Var<T> replace_rows(Var<T> x,
                                       const std::vector<std::uint8_t>& mask,
                                       Var<T> v);

// ---- attention ----------------------------------------------------------
/// Multi-head scaled dot-product attention, computed independently per
/// segment: query segment s attends only to key/value segment s.
/// q:[mq, d]  k:[mk, d]  v:[mk, dv]  ->  [mq, dv]
/// When `weights` is non-null it receives one [len_q, len_k] matrix per
/// (segment, head), segment-major.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads,
                 const Segments& q_segments, const Segments& kv_segments,
                 std::vector<Tensor<T>>* weights = nullptr);

}  // namespace molf::ad
