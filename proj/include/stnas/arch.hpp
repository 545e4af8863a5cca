#pragma once

// The searchable architecture space: six cell-kind choices placed on the
// edges of a fixed four-node DAG, and the models instantiated from them.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stnas/autodiff.hpp"
#include "stnas/st_ops.hpp"

namespace stnas {

inline constexpr std::size_t kLayerCount = 6;
inline constexpr std::size_t kDagNodes = 4;
inline constexpr std::size_t kSpaceSize = 729;  // 3^6

struct ArchSpec {
  std::array<CellKind, kLayerCount> layers{};

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
  friend auto operator<=>(const ArchSpec&, const ArchSpec&) = default;
};

ArchSpec uniform_spec(CellKind kind);

// Position in enumerate_space() order (base-3 digits, Layer_1 most significant).
std::size_t spec_index(const ArchSpec& spec);
ArchSpec spec_from_index(std::size_t index);

// All 729 specs, lexicographic with STP < STT < TTS per layer.
std::vector<ArchSpec> enumerate_space();

// {"Layer_1": "<canonical name>", ..., "Layer_6": "..."} with keys in order.
nlohmann::ordered_json to_json(const ArchSpec& spec);
// Prompt-style single-line text of the same object, with ": " and ", " separators.
std::string to_json_text(const ArchSpec& spec);
// Strict inverse of to_json. Throws ParseError naming the offending layer.
ArchSpec arch_from_json(const nlohmann::json& object);
// "STP,STT,TTS,..." short form used by the CLI.
std::string to_short_string(const ArchSpec& spec);
ArchSpec arch_from_short_string(const std::string& text);

struct DagEdge {
  int src;
  int dst;
};

struct DagTopology {
  int node_count = static_cast<int>(kDagNodes);
  std::array<DagEdge, kLayerCount> edges{};

  int in_degree(int node) const;
  int out_degree(int node) const;
};

// Edges (1->2), (1->3), (1->4), (2->3), (2->4), (3->4); edge i carries Layer_{i+1}.
const DagTopology& canonical_topology();

struct ModelConfig {
  std::size_t hidden_size = 16;
  std::size_t attn_dim = 16;
  std::size_t attn_heads = 2;
  std::size_t ffn_dim = 32;
  int graph_order = 2;
  int max_graph_order = 2;
  double dropout = 0.1;
  std::size_t input_dim = 1;
  std::size_t horizon = 12;
  std::size_t history = 12;
  std::size_t node_emb_dim = 8;
  std::size_t nodes = 0;  // taken from the dataset

  CellDims cell_dims() const;
  void validate() const;
};

struct ModelInstance {
  ArchSpec spec;
  ModelConfig config;
  std::uint64_t seed = 0;
  ParamStore params;
  ParamId embed_w, embed_b;
  std::array<CellParams, kLayerCount> edges;
  ParamId head_w, head_b;  // C x P and P
};

// Xavier-uniform weights and zero biases drawn from `seed`; deterministic.
ModelInstance init_model(const ArchSpec& spec, const ModelConfig& cfg, std::uint64_t seed);

// Batched forward: x is [B, S, N, C_raw]; returns predictions [B, N, P].
// Parameters are bound through `bind` (trainable or frozen).
Var forward(const ModelInstance& model, Var x, const GraphVars& graph, ParamBinder& bind,
            ForwardContext& ctx);

// Trainable forward on `tape` with dropout controlled by ctx.
Var forward(Tape& tape, ModelInstance& model, Var x, const AdjacencySet& adj, ForwardContext& ctx);

// Inference on a batch [B, S, N, C_raw] -> [B, N, P]; does not touch gradients.
Tensor predict_batch(const ModelInstance& model, const Tensor& x, const AdjacencySet& adj);

// Single window [S, N, C_raw] -> [P, N].
Tensor predict(const ModelInstance& model, const Tensor& x_hist, const AdjacencySet& adj);

}  // namespace stnas
