#include "stnas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "stnas/errors.hpp"
#include "stnas/kernels.hpp"

namespace stnas {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

ParamId ParamStore::add(std::string name, Tensor value) {
  Param p;
  p.name = std::move(name);
  p.grad = Tensor::zeros(value.shape());
  p.first_moment = Tensor::zeros(value.shape());
  p.second_moment = Tensor::zeros(value.shape());
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return ParamId{params_.size() - 1};
}

std::size_t ParamStore::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.values().begin(), p.grad.values().end(), Real(0));
}

void ParamStore::adam_step(const Adam& cfg) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params_) {
    auto w = p.value.values();
    auto g = p.grad.values();
    auto m = p.first_moment.values();
    auto v = p.second_moment.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<Real>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
      v[i] = static_cast<Real>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] = static_cast<Real>(w[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name || a.params_[i].value != b.params_[i].value)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(*this); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Relu: return "relu";
    case OpKind::EluPlusOne: return "elu_plus_one";
    case OpKind::Abs: return "abs";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::ConcatLast: return "concat_last";
    case OpKind::SliceLast: return "slice_last";
    case OpKind::SelectStep: return "select_step";
    case OpKind::GraphPropagate: return "graph_propagate";
    case OpKind::GraphMix: return "graph_mix";
    case OpKind::LinearAttention: return "linear_attention";
    case OpKind::Dropout: return "dropout";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "?";
}

Var Tape::constant(Tensor value) { return record(OpKind::Constant, std::move(value), {}, nullptr); }

Var Tape::param(ParamStore& store, ParamId id) {
  auto& slots = bound_[&store];
  if (auto it = slots.find(id.index); it != slots.end()) return Var{this, it->second};
  Node node;
  node.kind = OpKind::Parameter;
  node.value = store[id].value;
  node.needs_grad = true;
  node.store = &store;
  node.param = id;
  nodes_.push_back(std::move(node));
  slots.emplace(id.index, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (consumed_) throw ContractError("tape already consumed by backward");
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].needs_grad; });
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor::zeros(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  if (consumed_) throw ContractError("tape already consumed by backward");
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(value(loss).shape()));
  }
  consumed_ = true;
  grad_slot(loss.id)[0] = 1;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.needs_grad || node.grad.shape() != node.value.shape()) continue;
    if (node.kind == OpKind::Parameter) {
      auto dst = (*node.store)[node.param].grad.values();
      auto src = node.grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class Fn>
Var unary_map(OpKind kind, Var a, Fn f, Tape::BackwardFn bw) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(kind, std::move(y), {a.id}, std::move(bw));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& w = t.value(b);
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = leading_rows(x.shape());
  const std::size_t k = w.dim(0);
  const std::size_t n = w.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor y(out_shape);
  kernels::gemm_nn(rows, n, k, x.values(), w.values(), y.values(), false);
  return t.record(OpKind::MatMul, std::move(y), {a.id, b.id},
                  [ia = a.id, ib = b.id, rows, k, n](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    if (tp.needs_grad(ia)) {
                      kernels::gemm_nt(rows, k, n, dy.values(), tp.value_of(ib).values(),
                                       tp.grad_slot(ia).values(), true);
                    }
                    if (tp.needs_grad(ib)) {
                      kernels::gemm_tn(k, n, rows, tp.value_of(ia).values(), dy.values(),
                                       tp.grad_slot(ib).values(), true);
                    }
                  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return t.record(OpKind::Transpose, std::move(y), {a.id}, [ia = a.id, m, n](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_of(self);
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& z = t.value(b);
  if (x.shape() != z.shape() && z.rank() == 1 && x.rank() > 1 && z.dim(0) == x.shape().back()) {
    return add_bias(a, b);
  }
  require_same_shape("add", x, z);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i];
  return t.record(OpKind::Add, std::move(y), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_of(self);
    for (std::size_t in : {ia, ib}) {
      if (!tp.needs_grad(in)) continue;
      Tensor& dx = tp.grad_slot(in);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& z = t.value(b);
  require_same_shape("sub", x, z);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - z[i];
  return t.record(OpKind::Sub, std::move(y), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_of(self);
    if (tp.needs_grad(ia)) {
      Tensor& dx = tp.grad_slot(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& dz = tp.grad_slot(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) dz[i] -= dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& z = t.value(b);
  require_same_shape("mul", x, z);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i];
  return t.record(OpKind::Mul, std::move(y), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_of(self);
    if (tp.needs_grad(ia)) {
      const Tensor& zv = tp.value_of(ib);
      Tensor& dx = tp.grad_slot(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * zv[i];
    }
    if (tp.needs_grad(ib)) {
      const Tensor& xv = tp.value_of(ia);
      Tensor& dz = tp.grad_slot(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) dz[i] += dy[i] * xv[i];
    }
  });
}

Var scale(Var a, Real factor) {
  return unary_map(OpKind::Scale, a, [factor](Real v) { return v * factor; },
                   [ia = a.id, factor](Tape& tp, std::size_t self) {
                     const Tensor& dy = tp.grad_of(self);
                     Tensor& dx = tp.grad_slot(ia);
                     for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
                   });
}

Var add_bias(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& bias = t.value(b);
  if (bias.rank() != 1 || x.rank() < 1 || bias.dim(0) != x.shape().back()) {
    throw DimensionError("add_bias: cannot broadcast " + shape_str(bias.shape()) + " over " +
                         shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = leading_rows(x.shape());
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = x[r * n + j] + bias[j];
  return t.record(OpKind::AddBias, std::move(y), {a.id, b.id},
                  [ia = a.id, ib = b.id, rows, n](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    if (tp.needs_grad(ia)) {
                      Tensor& dx = tp.grad_slot(ia);
                      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& db = tp.grad_slot(ib);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < n; ++j) db[j] += dy[r * n + j];
                    }
                  });
}

Var relu(Var a) {
  return unary_map(OpKind::Relu, a, [](Real v) { return v > 0 ? v : Real(0); },
                   [ia = a.id](Tape& tp, std::size_t self) {
                     const Tensor& dy = tp.grad_of(self);
                     const Tensor& x = tp.value_of(ia);
                     Tensor& dx = tp.grad_slot(ia);
                     for (std::size_t i = 0; i < dy.size(); ++i)
                       if (x[i] > 0) dx[i] += dy[i];
                   });
}

Var elu_plus_one(Var a) {
  return unary_map(OpKind::EluPlusOne, a, [](Real v) { return v >= 0 ? v + 1 : std::exp(v); },
                   [ia = a.id](Tape& tp, std::size_t self) {
                     const Tensor& dy = tp.grad_of(self);
                     const Tensor& x = tp.value_of(ia);
                     const Tensor& y = tp.value_of(self);
                     Tensor& dx = tp.grad_slot(ia);
                     for (std::size_t i = 0; i < dy.size(); ++i)
                       dx[i] += x[i] >= 0 ? dy[i] : dy[i] * y[i];
                   });
}

Var abs(Var a) {
  return unary_map(OpKind::Abs, a, [](Real v) { return std::abs(v); },
                   [ia = a.id](Tape& tp, std::size_t self) {
                     const Tensor& dy = tp.grad_of(self);
                     const Tensor& x = tp.value_of(ia);
                     Tensor& dx = tp.grad_slot(ia);
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       if (x[i] > 0) dx[i] += dy[i];
                       else if (x[i] < 0) dx[i] -= dy[i];
                     }
                   });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() < 1 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: need at least one column, got " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = leading_rows(x.shape());
  Tensor y(x.shape());
  kernels::softmax_rows(rows, cols, x.values(), y.values());
  return t.record(OpKind::SoftmaxRows, std::move(y), {a.id}, [ia = a.id, rows, cols](Tape& tp, std::size_t self) {
    const Tensor& dy = tp.grad_of(self);
    const Tensor& y = tp.value_of(self);
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      Real dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * y[o + j];
      for (std::size_t j = 0; j < cols; ++j) dx[o + j] += y[o + j] * (dy[o + j] - dot);
    }
  });
}

Var concat_last(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& z = t.value(b);
  const bool leading_equal = x.rank() == z.rank() && x.rank() >= 1 &&
                             std::equal(x.shape().begin(), x.shape().end() - 1, z.shape().begin());
  if (!leading_equal) {
    throw DimensionError("concat_last: leading shapes differ, " + shape_str(x.shape()) + " vs " +
                         shape_str(z.shape()));
  }
  const std::size_t c1 = x.shape().back(), c2 = z.shape().back();
  const std::size_t rows = leading_rows(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = c1 + c2;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * c1, c1, y.data() + r * (c1 + c2));
    std::copy_n(z.data() + r * c2, c2, y.data() + r * (c1 + c2) + c1);
  }
  return t.record(OpKind::ConcatLast, std::move(y), {a.id, b.id},
                  [ia = a.id, ib = b.id, rows, c1, c2](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    const std::size_t w = c1 + c2;
                    if (tp.needs_grad(ia)) {
                      Tensor& dx = tp.grad_slot(ia);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c1; ++j) dx[r * c1 + j] += dy[r * w + j];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& dz = tp.grad_slot(ib);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c2; ++j) dz[r * c2 + j] += dy[r * w + c1 + j];
                    }
                  });
}

Var slice_last(Var a, std::size_t begin, std::size_t width) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() < 1 || begin + width > x.shape().back()) {
    throw DimensionError("slice_last: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + width) + ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = leading_rows(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = width;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * cols + begin, width, y.data() + r * width);
  return t.record(OpKind::SliceLast, std::move(y), {a.id},
                  [ia = a.id, rows, cols, begin, width](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    Tensor& dx = tp.grad_slot(ia);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < width; ++j) dx[r * cols + begin + j] += dy[r * width + j];
                  });
}

Var select_step(Var a, std::size_t step) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() < 3 || step >= x.dim(1)) {
    throw DimensionError("select_step: step " + std::to_string(step) + " invalid for " +
                         shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1);
  const std::size_t inner = x.size() / (batch * steps);
  Shape out_shape;
  out_shape.push_back(batch);
  out_shape.insert(out_shape.end(), x.shape().begin() + 2, x.shape().end());
  Tensor y(out_shape);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(x.data() + (b * steps + step) * inner, inner, y.data() + b * inner);
  return t.record(OpKind::SelectStep, std::move(y), {a.id},
                  [ia = a.id, batch, steps, inner, step](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    Tensor& dx = tp.grad_slot(ia);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < inner; ++i) dx[(b * steps + step) * inner + i] += dy[b * inner + i];
                  });
}

Var graph_propagate(Var m, Var x) {
  Tape& t = tape_of(m, x);
  const Tensor& mat = t.value(m);
  const Tensor& xs = t.value(x);
  if (mat.rank() != 2 || mat.dim(0) != mat.dim(1) || xs.rank() < 2 ||
      xs.dim(xs.rank() - 2) != mat.dim(0)) {
    throw DimensionError("graph_propagate: matrix " + shape_str(mat.shape()) +
                         " does not match node axis of " + shape_str(xs.shape()));
  }
  const std::size_t nodes = mat.dim(0);
  const std::size_t width = xs.shape().back();
  const std::size_t groups = xs.size() / (nodes * width);
  Tensor y(xs.shape());
  kernels::graph_propagate(groups, nodes, width, mat.values(), xs.values(), y.values(), false);
  return t.record(OpKind::GraphPropagate, std::move(y), {m.id, x.id},
                  [im = m.id, ix = x.id, groups, nodes, width](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    if (tp.needs_grad(ix)) {
                      kernels::graph_propagate(groups, nodes, width, tp.value_of(im).values(),
                                               dy.values(), tp.grad_slot(ix).values(), true);
                    }
                    if (tp.needs_grad(im)) {
                      kernels::graph_outer(groups, nodes, width, dy.values(),
                                           tp.value_of(ix).values(), tp.grad_slot(im).values());
                    }
                  });
}

Var graph_mix(const std::vector<Var>& mats, Var z) {
  if (mats.empty()) throw DimensionError("graph_mix: no matrices");
  Tape& t = *z.tape;
  const Tensor& zs = t.value(z);
  const std::size_t count = mats.size();
  const std::size_t nodes = t.value(mats.front()).dim(0);
  auto stacked = std::make_shared<std::vector<Real>>();
  stacked->reserve(count * nodes * nodes);
  for (Var m : mats) {
    tape_of(m, z);
    const Tensor& mat = t.value(m);
    if (mat.rank() != 2 || mat.dim(0) != nodes || mat.dim(1) != nodes) {
      throw DimensionError("graph_mix: matrix " + shape_str(mat.shape()) + " is not " +
                           std::to_string(nodes) + "x" + std::to_string(nodes));
    }
    stacked->insert(stacked->end(), mat.data(), mat.data() + mat.size());
  }
  if (zs.rank() < 2 || zs.dim(zs.rank() - 2) != nodes || zs.shape().back() % count != 0) {
    throw DimensionError("graph_mix: input " + shape_str(zs.shape()) + " does not hold " +
                         std::to_string(count) + " blocks over " + std::to_string(nodes) + " nodes");
  }
  const std::size_t width = zs.shape().back() / count;
  const std::size_t groups = zs.size() / (nodes * width * count);
  Shape out_shape = zs.shape();
  out_shape.back() = width;
  Tensor y(out_shape);
  kernels::graph_mix(groups, nodes, width, count, *stacked, zs.values(), y.values());
  std::vector<std::size_t> inputs;
  for (Var m : mats) inputs.push_back(m.id);
  inputs.push_back(z.id);
  return t.record(OpKind::GraphMix, std::move(y), inputs,
                  [inputs, stacked, groups, nodes, width, count](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    const std::size_t iz = inputs.back();
                    if (tp.needs_grad(iz)) {
                      kernels::graph_mix_transpose(groups, nodes, width, count, *stacked,
                                                   dy.values(), tp.grad_slot(iz).values());
                    }
                    for (std::size_t t = 0; t < count; ++t) {
                      if (!tp.needs_grad(inputs[t])) continue;
                      kernels::graph_mix_outer(groups, nodes, width, count, t, dy.values(),
                                               tp.value_of(iz).values(),
                                               tp.grad_slot(inputs[t]).values());
                    }
                  });
}

Var linear_attention(Var phi_q, Var phi_k, Var v, std::size_t heads) {
  Tape& t = tape_of(phi_q, phi_k);
  tape_of(phi_q, v);
  const Tensor& q = t.value(phi_q);
  const Tensor& k = t.value(phi_k);
  const Tensor& vv = t.value(v);
  require_same_shape("linear_attention", q, k);
  require_same_shape("linear_attention", q, vv);
  if (q.rank() != 3 && q.rank() != 4) {
    throw DimensionError("linear_attention: expected [B,T,N,D] or [T,N,D], got " + shape_str(q.shape()));
  }
  kernels::AttentionDims d;
  const std::size_t off = q.rank() == 4 ? 1 : 0;
  d.batch = off ? q.dim(0) : 1;
  d.steps = q.dim(off);
  d.nodes = q.dim(off + 1);
  d.dim = q.dim(off + 2);
  d.heads = heads;
  if (heads == 0 || d.dim % heads != 0) {
    throw ConfigError("linear_attention: attention dim " + std::to_string(d.dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  Tensor y(q.shape());
  kernels::linear_attention_forward(d, q.values(), k.values(), vv.values(), y.values());
  return t.record(OpKind::LinearAttention, std::move(y), {phi_q.id, phi_k.id, v.id},
                  [iq = phi_q.id, ik = phi_k.id, iv = v.id, d](Tape& tp, std::size_t self) {
                    // The kernel fills all three gradients at once; inputs that
                    // do not need one get a scratch slot that is never read.
                    Tensor scratch_q, scratch_k, scratch_v;
                    auto slot = [&](std::size_t id, Tensor& scratch) -> Tensor& {
                      if (tp.needs_grad(id)) return tp.grad_slot(id);
                      scratch = Tensor::zeros(tp.value_of(id).shape());
                      return scratch;
                    };
                    Tensor& dq = slot(iq, scratch_q);
                    Tensor& dk = slot(ik, scratch_k);
                    Tensor& dv = slot(iv, scratch_v);
                    kernels::linear_attention_backward(d, tp.value_of(iq).values(), tp.value_of(ik).values(),
                                                       tp.value_of(iv).values(), tp.grad_of(self).values(),
                                                       dq.values(), dk.values(), dv.values());
                  });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0) return a;
  if (rate >= 1) throw ConfigError("dropout rate must be below 1");
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& m : mask) m = u(rng) < rate ? Real(0) : keep_scale;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
  return t.record(OpKind::Dropout, std::move(y), {a.id},
                  [ia = a.id, mask = std::move(mask)](Tape& tp, std::size_t self) {
                    const Tensor& dy = tp.grad_of(self);
                    Tensor& dx = tp.grad_slot(ia);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  Real total = 0;
  for (Real v : x.values()) total += v;
  return t.record(OpKind::Sum, Tensor::scalar(total), {a.id}, [ia = a.id](Tape& tp, std::size_t self) {
    const Real g = tp.grad_of(self)[0];
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.empty()) throw DimensionError("mean of an empty tensor");
  Real total = 0;
  for (Real v : x.values()) total += v;
  const Real inv = Real(1) / static_cast<Real>(x.size());
  return t.record(OpKind::Mean, Tensor::scalar(total * inv), {a.id}, [ia = a.id, inv](Tape& tp, std::size_t self) {
    const Real g = tp.grad_of(self)[0] * inv;
    Tensor& dx = tp.grad_slot(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var elementwise(Elementwise op, Var a, Var b) {
  switch (op) {
    case Elementwise::Add: return add(a, b);
    case Elementwise::Sub: return sub(a, b);
    case Elementwise::Mul: return mul(a, b);
    case Elementwise::Relu: return relu(a);
    case Elementwise::EluPlusOne: return elu_plus_one(a);
  }
  throw ContractError("unknown elementwise op");
}

}  // namespace stnas
