#include "stnas/st_ops.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "stnas/errors.hpp"

namespace stnas {

std::string_view canonical_name(CellKind kind) {
  switch (kind) {
    case CellKind::STP: return "spatial-temporal-parallel";
    case CellKind::STT: return "spatial-then-temporal";
    case CellKind::TTS: return "temporal-then-spatial";
  }
  return "";
}

std::string_view short_name(CellKind kind) {
  switch (kind) {
    case CellKind::STP: return "STP";
    case CellKind::STT: return "STT";
    case CellKind::TTS: return "TTS";
  }
  return "";
}

std::optional<CellKind> cell_kind_from_name(std::string_view name) {
  std::string lowered;
  for (char c : name) {
    if (!std::isspace(static_cast<unsigned char>(c)))
      lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (lowered == "spatial-temporal-parallel" || lowered == "spatial-temporal-parallely" ||
      lowered == "stp")
    return CellKind::STP;
  if (lowered == "spatial-then-temporal" || lowered == "stt") return CellKind::STT;
  if (lowered == "temporal-then-spatial" || lowered == "tts") return CellKind::TTS;
  return std::nullopt;
}

AdjacencySet build_adjacency_set(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw InputError("adjacency must be square, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  for (Real v : a.values()) {
    if (!std::isfinite(v) || v < 0) throw InputError("adjacency entries must be finite and non-negative");
  }
  AdjacencySet out;
  out.raw = a;
  out.normalized = Tensor({n, n});
  out.forward = Tensor({n, n});
  out.backward = Tensor({n, n});

  std::vector<Real> inv_sqrt_degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real degree = 1;  // self loop
    for (std::size_t j = 0; j < n; ++j) degree += a.at(i, j);
    inv_sqrt_degree[i] = Real(1) / std::sqrt(degree);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Real tilde = a.at(i, j) + (i == j ? Real(1) : Real(0));
      out.normalized.at(i, j) = inv_sqrt_degree[i] * tilde * inv_sqrt_degree[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    Real out_weight = 0, in_weight = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out_weight += a.at(i, j);
      in_weight += a.at(j, i);
    }
    for (std::size_t j = 0; j < n; ++j) {
      out.forward.at(i, j) = out_weight > 0 ? a.at(i, j) / out_weight : Real(0);
      out.backward.at(i, j) = in_weight > 0 ? a.at(j, i) / in_weight : Real(0);
    }
  }
  return out;
}

Var ParamBinder::operator()(ParamId id) {
  if (mutable_) return tape_.param(*mutable_, id);
  if (auto it = constants_.find(id.index); it != constants_.end()) return it->second;
  Var v = tape_.constant(store_[id].value);
  constants_.emplace(id.index, v);
  return v;
}

GraphVars GraphVars::bind(Tape& tape, const AdjacencySet& adj) {
  return GraphVars{tape.constant(adj.normalized), tape.constant(adj.forward),
                   tape.constant(adj.backward)};
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = static_cast<Real>(u(rng));
  return t;
}

CellParams add_cell_params(ParamStore& store, CellKind kind, const CellDims& d, std::mt19937_64& rng,
                           const std::string& prefix) {
  if (d.attn_heads == 0 || d.attn_dim % d.attn_heads != 0) {
    throw ConfigError("attention dim " + std::to_string(d.attn_dim) + " is not divisible by " +
                      std::to_string(d.attn_heads) + " heads");
  }
  if (d.graph_order < 0 || d.graph_order > d.max_graph_order) {
    throw ConfigError("graph order " + std::to_string(d.graph_order) + " exceeds maximum " +
                      std::to_string(d.max_graph_order));
  }
  const std::size_t c = d.hidden;
  CellParams p;
  p.kind = kind;
  auto add = [&](const std::string& name, std::size_t in, std::size_t out) {
    return store.add(prefix + name, xavier_uniform(in, out, rng));
  };
  p.spatial.w_g = add("spatial.w_g", c, c);
  p.spatial.w_f = add("spatial.w_f", c, c);
  p.spatial.w_b = add("spatial.w_b", c, c);
  p.spatial.w_adp = add("spatial.w_adp", c, c);
  p.spatial.e1 = add("spatial.e1", d.nodes, d.node_emb);
  p.spatial.e2 = add("spatial.e2", d.nodes, d.node_emb);
  p.spatial.order = d.graph_order;

  p.temporal.w_q = add("temporal.w_q", c, d.attn_dim);
  p.temporal.w_k = add("temporal.w_k", c, d.attn_dim);
  p.temporal.w_v = add("temporal.w_v", c, d.attn_dim);
  p.temporal.w_o = add("temporal.w_o", d.attn_dim, c);
  p.temporal.heads = d.attn_heads;

  p.ffn.w1 = add("ffn.w1", c, d.ffn_dim);
  p.ffn.b1 = store.add(prefix + "ffn.b1", Tensor::zeros({d.ffn_dim}));
  p.ffn.w2 = add("ffn.w2", d.ffn_dim, c);
  p.ffn.b2 = store.add(prefix + "ffn.b2", Tensor::zeros({c}));

  if (kind == CellKind::STP) p.merge = add("merge.w_m", 2 * c, c);
  return p;
}

Var adaptive_adjacency(Var e1, Var e2) {
  if (e1.shape().size() != 2 || e2.shape().size() != 2 || e1.shape()[1] != e2.shape()[1] ||
      e1.shape()[0] != e2.shape()[0]) {
    throw DimensionError("adaptive_adjacency: embeddings " + shape_str(e1.shape()) + " and " +
                         shape_str(e2.shape()) + " do not match");
  }
  return softmax_rows(relu(matmul(e1, transpose(e2))));
}

Var mix_gc(Var x, const GraphVars& g, const SpatialParams& p, ParamBinder& bind, Var adaptive) {
  // M (X W) == (M X) W, so one product with the packed weights feeds all four graphs.
  Var w = concat_last(concat_last(bind(p.w_g), bind(p.w_f)), concat_last(bind(p.w_b), bind(p.w_adp)));
  return graph_mix({g.normalized, g.forward, g.backward, adaptive}, matmul(x, w));
}

Var mix_gc(Var x, const GraphVars& g, const SpatialParams& p, ParamBinder& bind) {
  return mix_gc(x, g, p, bind, adaptive_adjacency(bind(p.e1), bind(p.e2)));
}

Var spatial_op(Var x, const GraphVars& g, const SpatialParams& p, ParamBinder& bind, int order,
               int max_order) {
  if (order < 0 || order > max_order) {
    throw ConfigError("graph order " + std::to_string(order) + " outside [0, " +
                      std::to_string(max_order) + "]");
  }
  if (order == 0) return x;
  Var adaptive = adaptive_adjacency(bind(p.e1), bind(p.e2));
  Var h = x;
  for (int k = 0; k < order; ++k) h = mix_gc(h, g, p, bind, adaptive);
  return h;
}

Var temporal_op(Var x, const AttnParams& p, ParamBinder& bind) {
  Var q = elu_plus_one(matmul(x, bind(p.w_q)));
  Var k = elu_plus_one(matmul(x, bind(p.w_k)));
  Var v = matmul(x, bind(p.w_v));
  return matmul(linear_attention(q, k, v, p.heads), bind(p.w_o));
}

Var ffn(Var x, const FfnParams& p, ParamBinder& bind) {
  Var hidden = relu(add_bias(matmul(x, bind(p.w1)), bind(p.b1)));
  return add(x, add_bias(matmul(hidden, bind(p.w2)), bind(p.b2)));
}

Var cell_forward(const CellParams& cell, Var x, const GraphVars& g, ParamBinder& bind,
                 const CellDims& dims, ForwardContext& ctx) {
  const int order = cell.spatial.order;
  Var mixed;
  switch (cell.kind) {
    case CellKind::STP: {
      Var both = concat_last(spatial_op(x, g, cell.spatial, bind, order, dims.max_graph_order),
                             temporal_op(x, cell.temporal, bind));
      mixed = matmul(both, bind(*cell.merge));
      break;
    }
    case CellKind::STT:
      mixed = temporal_op(spatial_op(x, g, cell.spatial, bind, order, dims.max_graph_order),
                          cell.temporal, bind);
      break;
    case CellKind::TTS:
      mixed = spatial_op(temporal_op(x, cell.temporal, bind), g, cell.spatial, bind, order,
                         dims.max_graph_order);
      break;
  }
  Var y = ffn(mixed, cell.ffn, bind);
  if (ctx.training && ctx.dropout > 0 && ctx.rng) y = dropout(y, ctx.dropout, *ctx.rng);
  return y;
}

}  // namespace stnas
