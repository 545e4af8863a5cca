#include "stnas/arch.hpp"

#include <sstream>

#include "stnas/errors.hpp"

namespace stnas {

ArchSpec uniform_spec(CellKind kind) {
  ArchSpec spec;
  spec.layers.fill(kind);
  return spec;
}

std::size_t spec_index(const ArchSpec& spec) {
  std::size_t index = 0;
  for (CellKind k : spec.layers) index = index * 3 + static_cast<std::size_t>(k);
  return index;
}

ArchSpec spec_from_index(std::size_t index) {
  if (index >= kSpaceSize) throw ContractError("spec index out of range: " + std::to_string(index));
  ArchSpec spec;
  for (std::size_t i = kLayerCount; i-- > 0;) {
    spec.layers[i] = static_cast<CellKind>(index % 3);
    index /= 3;
  }
  return spec;
}

std::vector<ArchSpec> enumerate_space() {
  std::vector<ArchSpec> out;
  out.reserve(kSpaceSize);
  for (std::size_t i = 0; i < kSpaceSize; ++i) out.push_back(spec_from_index(i));
  return out;
}

static std::string layer_key(std::size_t i) { return "Layer_" + std::to_string(i + 1); }

nlohmann::ordered_json to_json(const ArchSpec& spec) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kLayerCount; ++i) j[layer_key(i)] = std::string(canonical_name(spec.layers[i]));
  return j;
}

std::string to_json_text(const ArchSpec& spec) {
  std::string out = "{";
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    if (i) out += ", ";
    out += "\"" + layer_key(i) + "\": \"" + std::string(canonical_name(spec.layers[i])) + "\"";
  }
  return out + "}";
}

ArchSpec arch_from_json(const nlohmann::json& object) {
  if (!object.is_object()) throw ParseError("architecture must be a JSON object");
  ArchSpec spec;
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    const std::string key = layer_key(i);
    auto it = object.find(key);
    if (it == object.end()) throw ParseError("missing " + key);
    if (!it->is_string()) throw ParseError(key + " is not a string");
    auto kind = cell_kind_from_name(it->get<std::string>());
    if (!kind) throw ParseError(key + " has unknown module \"" + it->get<std::string>() + "\"");
    spec.layers[i] = *kind;
  }
  return spec;
}

std::string to_short_string(const ArchSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    if (i) out += ",";
    out += short_name(spec.layers[i]);
  }
  return out;
}

ArchSpec arch_from_short_string(const std::string& text) {
  ArchSpec spec;
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= kLayerCount) throw ParseError("more than six layers in \"" + text + "\"");
    auto kind = cell_kind_from_name(item);
    if (!kind) throw ParseError("unknown module \"" + item + "\" in \"" + text + "\"");
    spec.layers[i++] = *kind;
  }
  if (i != kLayerCount) throw ParseError("expected six layers in \"" + text + "\"");
  return spec;
}

int DagTopology::in_degree(int node) const {
  int n = 0;
  for (const auto& e : edges) n += e.dst == node;
  return n;
}

int DagTopology::out_degree(int node) const {
  int n = 0;
  for (const auto& e : edges) n += e.src == node;
  return n;
}

const DagTopology& canonical_topology() {
  static const DagTopology topo{
      static_cast<int>(kDagNodes), {{{1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}}}};
  return topo;
}

CellDims ModelConfig::cell_dims() const {
  CellDims d;
  d.nodes = nodes;
  d.hidden = hidden_size;
  d.attn_dim = attn_dim;
  d.attn_heads = attn_heads;
  d.ffn_dim = ffn_dim;
  d.node_emb = node_emb_dim;
  d.graph_order = graph_order;
  d.max_graph_order = max_graph_order;
  return d;
}

void ModelConfig::validate() const {
  if (hidden_size == 0 || attn_dim == 0 || attn_heads == 0 || ffn_dim == 0 || input_dim == 0 ||
      horizon == 0 || history == 0 || node_emb_dim == 0 || nodes == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (attn_dim % attn_heads != 0) {
    throw ConfigError("attention dim " + std::to_string(attn_dim) + " is not divisible by " +
                      std::to_string(attn_heads) + " heads");
  }
  if (graph_order < 0 || graph_order > max_graph_order) {
    throw ConfigError("graph order " + std::to_string(graph_order) + " exceeds maximum " +
                      std::to_string(max_graph_order));
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
}

ModelInstance init_model(const ArchSpec& spec, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelInstance m;
  m.spec = spec;
  m.config = cfg;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  const CellDims dims = cfg.cell_dims();
  m.embed_w = m.params.add("embed.w", xavier_uniform(cfg.input_dim, cfg.hidden_size, rng));
  m.embed_b = m.params.add("embed.b", Tensor::zeros({cfg.hidden_size}));
  for (std::size_t e = 0; e < kLayerCount; ++e) {
    m.edges[e] = add_cell_params(m.params, spec.layers[e], dims, rng, "edge" + std::to_string(e + 1) + ".");
  }
  m.head_w = m.params.add("head.w", xavier_uniform(cfg.hidden_size, cfg.horizon, rng));
  m.head_b = m.params.add("head.b", Tensor::zeros({cfg.horizon}));
  return m;
}

Var forward(const ModelInstance& model, Var x, const GraphVars& graph, ParamBinder& bind,
            ForwardContext& ctx) {
  const auto& cfg = model.config;
  const Shape& in = x.shape();
  if (in.size() != 4 || in[1] != cfg.history || in[2] != cfg.nodes || in[3] != cfg.input_dim) {
    throw InputError("model input must be [B, " + std::to_string(cfg.history) + ", " +
                     std::to_string(cfg.nodes) + ", " + std::to_string(cfg.input_dim) + "], got " +
                     shape_str(in));
  }
  const CellDims dims = cfg.cell_dims();
  const auto& topo = canonical_topology();

  std::array<Var, kDagNodes + 1> state{};  // 1-based node ids
  std::array<bool, kDagNodes + 1> filled{};
  state[1] = add_bias(matmul(x, bind(model.embed_w)), bind(model.embed_b));
  filled[1] = true;
  // Canonical edge order visits every edge after its source is complete.
  for (std::size_t e = 0; e < kLayerCount; ++e) {
    const auto [src, dst] = topo.edges[e];
    Var out = cell_forward(model.edges[e], state[src], graph, bind, dims, ctx);
    state[dst] = filled[dst] ? add(state[dst], out) : out;
    filled[dst] = true;
  }
  Var last = select_step(state[kDagNodes], cfg.history - 1);  // [B, N, C]
  return add_bias(matmul(last, bind(model.head_w)), bind(model.head_b));
}

Var forward(Tape& tape, ModelInstance& model, Var x, const AdjacencySet& adj, ForwardContext& ctx) {
  ParamBinder bind(tape, model.params);
  return forward(model, x, GraphVars::bind(tape, adj), bind, ctx);
}

Tensor predict_batch(const ModelInstance& model, const Tensor& x, const AdjacencySet& adj) {
  Tape tape;
  ParamBinder bind(tape, static_cast<const ParamStore&>(model.params));
  ForwardContext ctx;
  Var y = forward(model, tape.constant(x), GraphVars::bind(tape, adj), bind, ctx);
  return y.value();
}

Tensor predict(const ModelInstance& model, const Tensor& x_hist, const AdjacencySet& adj) {
  Shape batched{1};
  batched.insert(batched.end(), x_hist.shape().begin(), x_hist.shape().end());
  const Tensor y = predict_batch(model, x_hist.reshaped(batched), adj);  // [1, N, P]
  const std::size_t n = y.dim(1), p = y.dim(2);
  Tensor out({p, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) out.at(j, i) = y[i * p + j];
  return out;
}

}  // namespace stnas
