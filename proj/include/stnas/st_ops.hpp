#pragma once

// Spatial and temporal operators and the three spatial-temporal cell kinds.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>

#include "stnas/autodiff.hpp"
#include "stnas/tensor.hpp"

namespace stnas {

enum class CellKind : std::uint8_t { STP = 0, STT = 1, TTS = 2 };

inline constexpr std::array<CellKind, 3> kCellKinds{CellKind::STP, CellKind::STT, CellKind::TTS};

// "spatial-temporal-parallel", "spatial-then-temporal", "temporal-then-spatial".
std::string_view canonical_name(CellKind kind);
std::string_view short_name(CellKind kind);
// Accepts the canonical names, the "spatial-temporal-parallely" spelling and
// the short names, case-insensitively.
std::optional<CellKind> cell_kind_from_name(std::string_view name);

// Graph matrices derived from a non-negative adjacency A:
//   normalized = D^-1/2 (A + I) D^-1/2,  D = rowsum(A + I)
//   forward    = A   / rowsum(A)     (zero row where the sum is zero)
//   backward   = A^T / rowsum(A^T)
struct AdjacencySet {
  Tensor raw;
  Tensor normalized;
  Tensor forward;
  Tensor backward;

  std::size_t nodes() const { return raw.empty() ? 0 : raw.dim(0); }
};

AdjacencySet build_adjacency_set(const Tensor& adjacency);

// Resolves parameters to tape nodes: gradient-tracked leaves for training,
// plain constants for inference on a const store.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamStore& store) : tape_(tape), mutable_(&store), store_(store) {}
  ParamBinder(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  Var operator()(ParamId id);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParamStore* mutable_ = nullptr;
  const ParamStore& store_;
  std::unordered_map<std::size_t, Var> constants_;
};

// Graph matrices placed on a tape once per forward pass.
struct GraphVars {
  Var normalized;
  Var forward;
  Var backward;

  static GraphVars bind(Tape& tape, const AdjacencySet& adj);
};

struct SpatialParams {
  ParamId w_g, w_f, w_b, w_adp;  // C_in x C_out each
  ParamId e1, e2;                // node embeddings, N x C_emb
  int order = 2;
};

struct AttnParams {
  ParamId w_q, w_k, w_v;  // C x d_attn
  ParamId w_o;            // d_attn x C
  std::size_t heads = 1;
};

struct FfnParams {
  ParamId w1, b1, w2, b2;
};

struct CellParams {
  CellKind kind = CellKind::STP;
  SpatialParams spatial;
  AttnParams temporal;
  FfnParams ffn;
  std::optional<ParamId> merge;  // 2C x C, STP only
};

struct CellDims {
  std::size_t nodes = 1;
  std::size_t hidden = 16;
  std::size_t attn_dim = 16;
  std::size_t attn_heads = 2;
  std::size_t ffn_dim = 32;
  std::size_t node_emb = 8;
  int graph_order = 2;
  int max_graph_order = 2;
};

// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

CellParams add_cell_params(ParamStore& store, CellKind kind, const CellDims& dims,
                           std::mt19937_64& rng, const std::string& prefix);

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

// softmax_rows(relu(E1 E2^T))
Var adaptive_adjacency(Var e1, Var e2);

// A_hat X W_g + P_f X W_f + P_b X W_b + A_adp X W_adp over [..., N, C].
Var mix_gc(Var x, const GraphVars& graph, const SpatialParams& p, ParamBinder& bind, Var adaptive);
Var mix_gc(Var x, const GraphVars& graph, const SpatialParams& p, ParamBinder& bind);

// Order-`order` mixed graph convolution: identity at 0, mix_gc composed
// `order` times otherwise (one adaptive adjacency shared by all hops).
Var spatial_op(Var x, const GraphVars& graph, const SpatialParams& p, ParamBinder& bind, int order,
               int max_order);

// Multi-head linear attention over the time axis with the elu+1 feature map,
// projected back to C by W_O.
Var temporal_op(Var x, const AttnParams& p, ParamBinder& bind);

// x + W2 relu(W1 x + b1) + b2
Var ffn(Var x, const FfnParams& p, ParamBinder& bind);

Var cell_forward(const CellParams& cell, Var x, const GraphVars& graph, ParamBinder& bind,
                 const CellDims& dims, ForwardContext& ctx);

}  // namespace stnas
