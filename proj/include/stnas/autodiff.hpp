#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Tape records every operation of one forward pass together with the values
// it produced. `backward` walks the tape once in reverse creation order and
// accumulates gradients; gradients of parameter leaves land in the ParamStore
// that owns them. A tape is single-use: it is consumed by `backward`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "stnas/tensor.hpp"

namespace stnas {

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
};

// Named parameters with gradient slots and Adam moment accumulators.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value);

  Param& operator[](ParamId id) { return params_.at(id.index); }
  const Param& operator[](ParamId id) const { return params_.at(id.index); }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const noexcept;

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  // Leaves the optimizer moments untouched.
  void zero_grad();
  std::int64_t step_count() const noexcept { return steps_; }

  struct Adam {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };
  // One bias-corrected Adam update from the current gradient slots.
  void adam_step(const Adam& cfg);

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<Param> params_;
  std::int64_t steps_ = 0;
};

class Tape;

// Handle to a node of a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  // Invalidated by the next op recorded on the same tape; copy to keep.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Relu,
  EluPlusOne,
  Abs,
  SoftmaxRows,
  ConcatLast,
  SliceLast,
  SelectStep,
  GraphPropagate,
  GraphMix,
  LinearAttention,
  Dropout,
  Sum,
  Mean,
};

const char* op_name(OpKind kind);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a stored parameter; binding the same id twice returns the same node.
  Var param(ParamStore& store, ParamId id);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Gradient of a scalar loss with respect to every node; parameter gradients
  // are added to their store's gradient slots. Consumes the tape.
  void backward(Var loss);

  // Used by op implementations.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient slot of node `id`, allocated as zeros on first use.
  Tensor& grad_slot(std::size_t id);
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    ParamStore* store = nullptr;
    ParamId param{};
  };

  std::vector<Node> nodes_;
  std::unordered_map<const ParamStore*, std::unordered_map<std::size_t, std::size_t>> bound_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Ranks follow the model's layout: activations are [..., C] with
// the feature axis last; matrix operands are 2-D.
// ---------------------------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]; leading axes of `a` are flattened into rows.
Var matmul(Var a, Var b);
Var transpose(Var a);  // 2-D only

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real factor);
// x[..., n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);

Var relu(Var a);
// x + 1 for x >= 0, exp(x) for x < 0 (elu shifted to be strictly positive).
Var elu_plus_one(Var a);
Var abs(Var a);

Var softmax_rows(Var a);
Var concat_last(Var a, Var b);
// Columns [begin, begin + width) of the last axis.
Var slice_last(Var a, std::size_t begin, std::size_t width);
// x[B, T, ...] -> x[B, step, ...] with the step axis removed.
Var select_step(Var x, std::size_t step);

// y[..., i, c] = sum_j m[i, j] x[..., j, c] for every leading index.
Var graph_propagate(Var m, Var x);
// y[..., i, c] = sum_t sum_j mats[t][i, j] z[..., j, t * W + c], where z packs
// one width-W block per matrix along its last axis.
Var graph_mix(const std::vector<Var>& mats, Var z);
// Normalized linear attention over axis 1 of [B, T, N, D] (rank-3 input is
// treated as B = 1). Inputs are the already feature-mapped queries and keys.
Var linear_attention(Var phi_q, Var phi_k, Var v, std::size_t heads);

// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

Var sum(Var a);
Var mean(Var a);

enum class Elementwise { Add, Sub, Mul, Relu, EluPlusOne };
// Dispatcher over the elementwise family; `b` is ignored by unary ops.
Var elementwise(Elementwise op, Var a, Var b = {});

}  // namespace stnas
