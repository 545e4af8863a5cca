#include <doctest.h>

#include <random>
#include <set>

#include "stnas/arch.hpp"
#include "stnas/errors.hpp"
#include "support.hpp"

using namespace stnas;
using stnas::test::check_gradients;
using stnas::test::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.hidden_size = 4;
  cfg.attn_dim = 4;
  cfg.attn_heads = 2;
  cfg.ffn_dim = 6;
  cfg.node_emb_dim = 2;
  cfg.history = 6;
  cfg.horizon = 3;
  cfg.nodes = 5;
  cfg.dropout = 0.0;
  return cfg;
}

AdjacencySet ring(std::size_t n) {
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    a.at(i, (i + 1) % n) = 1.0;
    a.at((i + 2) % n, i) = 0.5;
  }
  return build_adjacency_set(a);
}

ArchSpec mixed_spec() {
  return ArchSpec{{CellKind::STP, CellKind::TTS, CellKind::STT, CellKind::STT, CellKind::STP, CellKind::TTS}};
}

}  // namespace

TEST_CASE("canonical topology") {
  const DagTopology& topo = canonical_topology();
  CHECK(topo.node_count == 4);
  const std::array<std::pair<int, int>, 6> expected{{{1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}}};
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    CHECK(topo.edges[i].src == expected[i].first);
    CHECK(topo.edges[i].dst == expected[i].second);
    CHECK(topo.edges[i].src < topo.edges[i].dst);
  }
  CHECK(topo.in_degree(1) == 0);
  CHECK(topo.out_degree(4) == 0);
  CHECK(topo.in_degree(4) == 3);
  for (int v = 2; v <= 3; ++v) {
    CHECK(topo.in_degree(v) > 0);
    CHECK(topo.out_degree(v) > 0);
  }
}

TEST_CASE("enumerate_space") {
  const auto specs = enumerate_space();
  REQUIRE(specs.size() == 729);
  CHECK(specs.front() == uniform_spec(CellKind::STP));
  CHECK(specs.back() == uniform_spec(CellKind::TTS));
  CHECK(std::set<ArchSpec>(specs.begin(), specs.end()).size() == 729);
  CHECK(std::is_sorted(specs.begin(), specs.end()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(spec_index(specs[i]) == i);
    CHECK(spec_from_index(i) == specs[i]);
  }
  CHECK_THROWS_AS(spec_from_index(729), ContractError);
}

TEST_CASE("spec serialization") {
  const ArchSpec spec = mixed_spec();
  CHECK(to_json_text(spec) ==
        R"({"Layer_1": "spatial-temporal-parallel", "Layer_2": "temporal-then-spatial", )"
        R"("Layer_3": "spatial-then-temporal", "Layer_4": "spatial-then-temporal", )"
        R"("Layer_5": "spatial-temporal-parallel", "Layer_6": "temporal-then-spatial"})");
  CHECK(to_short_string(spec) == "STP,TTS,STT,STT,STP,TTS");
  CHECK(arch_from_short_string("stp, tts,STT,spatial-then-temporal,STP,TTS") == spec);

  SUBCASE("every spec survives json text and short form") {
    for (const ArchSpec& s : enumerate_space()) {
      CHECK(arch_from_json(nlohmann::json::parse(to_json_text(s))) == s);
      CHECK(arch_from_json(nlohmann::json::parse(to_json(s).dump())) == s);
      CHECK(arch_from_short_string(to_short_string(s)) == s);
    }
  }

  SUBCASE("errors name the offending layer") {
    nlohmann::json j = nlohmann::json::parse(to_json_text(spec));
    j.erase("Layer_4");
    try {
      arch_from_json(j);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("Layer_4") != std::string::npos);
    }
    j["Layer_4"] = "pooling";
    CHECK_THROWS_WITH_AS(arch_from_json(j), doctest::Contains("Layer_4"), ParseError);
    j["Layer_4"] = 3;
    CHECK_THROWS_AS(arch_from_json(j), ParseError);
    CHECK_THROWS_AS(arch_from_json(nlohmann::json::array()), ParseError);
    CHECK_THROWS_AS(arch_from_short_string("STP,STP"), ParseError);
    CHECK_THROWS_AS(arch_from_short_string("STP,STP,STP,STP,STP,STP,STP"), ParseError);
    CHECK_THROWS_AS(arch_from_short_string("STP,STP,STP,STP,STP,XYZ"), ParseError);
  }
}

TEST_CASE("init_model") {
  const ModelConfig cfg = small_config();
  const ModelInstance a = init_model(mixed_spec(), cfg, 42);
  const ModelInstance b = init_model(mixed_spec(), cfg, 42);
  const ModelInstance c = init_model(mixed_spec(), cfg, 43);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == c.params);
  CHECK(a.params[a.head_w].value.shape() == Shape{cfg.hidden_size, cfg.horizon});
  for (std::size_t e = 0; e < kLayerCount; ++e) CHECK(a.edges[e].kind == a.spec.layers[e]);
  for (const Param& p : a.params) {
    if (p.name.ends_with(".b") || p.name.ends_with(".b1") || p.name.ends_with(".b2")) {
      CHECK(p.value == Tensor::zeros(p.value.shape()));
    } else if (p.value.rank() == 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.value.dim(0) + p.value.dim(1)));
      for (Real v : p.value.values()) CHECK(std::abs(v) <= bound);
    }
  }

  ModelConfig bad = cfg;
  bad.attn_heads = 3;
  CHECK_THROWS_AS(init_model(mixed_spec(), bad, 1), ConfigError);
  bad = cfg;
  bad.graph_order = 3;
  CHECK_THROWS_AS(init_model(mixed_spec(), bad, 1), ConfigError);
  bad = cfg;
  bad.hidden_size = 0;
  CHECK_THROWS_AS(init_model(mixed_spec(), bad, 1), ConfigError);
}

TEST_CASE("forward") {
  std::mt19937_64 rng(21);
  const ModelConfig cfg = small_config();
  const AdjacencySet adj = ring(cfg.nodes);
  const Tensor x = random_tensor({2, cfg.history, cfg.nodes, 1}, rng);
  ModelInstance m = init_model(mixed_spec(), cfg, 5);

  const Tensor y = predict_batch(m, x, adj);
  CHECK(y.shape() == Shape{2, cfg.nodes, cfg.horizon});
  CHECK(predict_batch(m, x, adj) == y);
  const Tensor single = predict(m, random_tensor({cfg.history, cfg.nodes, 1}, rng), adj);
  CHECK(single.shape() == Shape{cfg.horizon, cfg.nodes});

  CHECK_THROWS_AS(predict_batch(m, random_tensor({2, cfg.history + 1, cfg.nodes, 1}, rng), adj), InputError);

  SUBCASE("a different cell on the only edge into node 2 changes the output") {
    ArchSpec other = mixed_spec();
    other.layers[0] = CellKind::STT;
    const Tensor y2 = predict_batch(init_model(other, cfg, 5), x, adj);
    CHECK(max_abs_diff(y, y2) > 1e-6);
  }

  SUBCASE("zero head gives zero prediction") {
    m.params[m.head_w].value = Tensor::zeros(m.params[m.head_w].value.shape());
    CHECK(predict_batch(m, x, adj) == Tensor::zeros({2, cfg.nodes, cfg.horizon}));
  }
}

TEST_CASE("full model gradient matches central differences") {
  std::mt19937_64 rng(22);
  const ModelConfig cfg = small_config();
  const AdjacencySet adj = ring(cfg.nodes);
  const Tensor x = random_tensor({2, cfg.history, cfg.nodes, 1}, rng);
  const Tensor target = random_tensor({2, cfg.nodes, cfg.horizon}, rng);
  for (const ArchSpec& spec : {mixed_spec(), uniform_spec(CellKind::STT)}) {
    CAPTURE(to_short_string(spec));
    ModelInstance m = init_model(spec, cfg, 9);
    // About a thousand relu inputs feed the loss; a step of 1e-5 lands one of
    // them across zero often enough to dominate the error, so use 1e-6.
    const auto r = check_gradients(
        m.params,
        [&](Tape& tape, ParamBinder& bind) {
          ForwardContext ctx;
          Var err = sub(forward(m, tape.constant(x), GraphVars::bind(tape, adj), bind, ctx), tape.constant(target));
          return mean(mul(err, err));
        },
        1e-6);
    CHECK(r.checked == m.params.element_count());
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
}
