#include <doctest.h>

#include <random>
#include <set>

#include "stnas/generation.hpp"
#include "stnas/response_parser.hpp"

using namespace stnas;

namespace {

const ArchSpec kSpec = arch_from_short_string("STP,TTS,STT,STP,TTS,STT");

ScriptedBackend cot_script(std::vector<ScriptedAnswer> answers, std::uint64_t seed = 1) {
  return ScriptedBackend(ScriptedPolicy{"cot", std::move(answers)}, seed);
}

std::vector<ScriptedAnswer> tot_pairs(const ArchSpec& spec) {
  std::vector<ScriptedAnswer> out;
  for (CellKind k : spec.layers) out.push_back(TotAnswer{k, true});
  return out;
}

bool has(const std::string& text, const std::string& fragment) { return text.find(fragment) != std::string::npos; }

}  // namespace

TEST_CASE("cot generation") {
  MemoryBank bank;

  SUBCASE("a valid answer takes one call") {
    auto backend = cot_script({kSpec});
    const auto r = generate_cot(backend, Stage::Explore, bank, 1, 15);
    CHECK(r.spec == kSpec);
    CHECK(r.transcript.size() == 1);
    CHECK_FALSE(r.fallback);
    CHECK(r.transcript[0].system == render_background("(no samples yet)"));
    CHECK(r.transcript[0].user == render_cot(Stage::Explore, 1, 15));
  }

  SUBCASE("garbage then a valid answer takes two calls") {
    auto backend = cot_script({std::string("I like turtles"), kSpec});
    const auto r = generate_cot(backend, Stage::Optimize, bank, 11, 15);
    CHECK(r.spec == kSpec);
    REQUIRE(r.transcript.size() == 2);
    CHECK(r.transcript[1].user.rfind(render_cot(Stage::Optimize, 11, 15), 0) == 0);
    CHECK(has(r.transcript[1].user, "could not be used"));
  }

  SUBCASE("only garbage falls back to a seeded random spec") {
    GenerationConfig cfg;
    cfg.seed = 77;
    auto a = cot_script(std::vector<ScriptedAnswer>(10, std::string("{}")));
    const auto r = generate_cot(a, Stage::Explore, bank, 2, 15, cfg);
    CHECK(r.fallback);
    CHECK(r.transcript.size() == 4);
    CHECK(r.warnings.size() == 1);
    auto b = cot_script(std::vector<ScriptedAnswer>(10, std::string("nope")));
    CHECK(generate_cot(b, Stage::Explore, bank, 2, 15, cfg).spec == r.spec);
  }

  SUBCASE("explore asks once more for a spec already in the bank") {
    EvalRecord rec;
    rec.round = 1;
    rec.spec = kSpec;
    rec.metrics.mae = 1;
    bank.insert(rec);
    auto repeat = cot_script({kSpec, kSpec, uniform_spec(CellKind::STP)});
    const auto r = generate_cot(repeat, Stage::Explore, bank, 2, 15);
    CHECK(r.spec == kSpec);
    REQUIRE(r.transcript.size() == 2);
    CHECK(has(r.transcript[1].user, "already exists in historical samples"));
    CHECK(has(r.transcript[0].system, "Round 1: "));

    auto fresh = cot_script({kSpec, uniform_spec(CellKind::STP)});
    CHECK(generate_cot(fresh, Stage::Explore, bank, 2, 15).spec == uniform_spec(CellKind::STP));
    auto optimize = cot_script({kSpec});
    CHECK(generate_cot(optimize, Stage::Optimize, bank, 12, 15).transcript.size() == 1);
  }
}

TEST_CASE("tot generation") {
  const MemoryBank bank;

  SUBCASE("all possible gives the scripted layers in twelve calls") {
    ScriptedBackend backend(ScriptedPolicy{"tot", tot_pairs(kSpec)});
    const auto r = generate_tot(backend, Stage::Explore, bank, 1, 15);
    CHECK(r.spec == kSpec);
    CHECK(r.transcript.size() == 12);
    CHECK_FALSE(r.fallback);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(r.transcript[i].kind == (i % 2 ? ExchangeKind::Judgment : ExchangeKind::Layer));
      CHECK(has(r.transcript[i].user, "You have chosen " + std::to_string((i + 1) / 2) + " layers"));
    }
  }

  SUBCASE("rejecting STT as the first layer") {
    std::vector<ScriptedAnswer> script{TotAnswer{CellKind::STT, true}, TotAnswer{CellKind::STT, true}};
    for (CellKind k : kSpec.layers) script.push_back(TotAnswer{k, true});
    ScriptedBackend backend(ScriptedPolicy{"tot", script}, 0, [](const std::vector<CellKind>& prefix) {
      return !(prefix.size() == 1 && prefix[0] == CellKind::STT);
    });
    const auto r = generate_tot(backend, Stage::Explore, bank, 1, 15);
    CHECK(r.spec.layers[0] != CellKind::STT);
    CHECK_FALSE(r.fallback);
    // The second STT is skipped without asking for a judgment.
    CHECK(r.transcript[2].kind == ExchangeKind::Layer);
    CHECK(r.transcript[3].kind == ExchangeKind::Layer);
  }

  SUBCASE("zero budget falls back at once") {
    GenerationConfig cfg;
    cfg.exchange_budget = 0;
    ScriptedBackend backend(ScriptedPolicy{"tot", tot_pairs(kSpec)});
    const auto r = generate_tot(backend, Stage::Explore, bank, 1, 15, cfg);
    CHECK(r.fallback);
    CHECK(r.transcript.empty());
    CHECK(backend.calls() == 0);
  }

  SUBCASE("everything impossible falls back") {
    ScriptedBackend backend(ScriptedPolicy{"tot", {}}, 3, [](const std::vector<CellKind>&) { return false; });
    const auto r = generate_tot(backend, Stage::Explore, bank, 1, 15);
    CHECK(r.fallback);
    CHECK(r.transcript.size() <= 6);
  }
}

TEST_CASE("tot never returns a rejected pair") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint64_t salt = rng();
    std::set<std::vector<CellKind>> rejected;
    auto judge = [&](const std::vector<CellKind>& prefix) {
      std::uint64_t h = salt;
      for (CellKind k : prefix) h = (h ^ static_cast<std::uint64_t>(k)) * 0x100000001b3ull;
      const bool ok = (h >> 33) % 10 >= 4;
      if (!ok) rejected.insert(prefix);
      return ok;
    };
    ScriptedBackend backend(ScriptedPolicy{"tot", {}}, salt, judge);
    GenerationConfig cfg;
    cfg.seed = salt;
    cfg.exchange_budget = 1 + static_cast<int>(rng() % 60);
    const auto r = generate_tot(backend, Stage::Optimize, MemoryBank{}, 1, 15, cfg);
    CHECK(static_cast<int>(r.transcript.size()) <= cfg.exchange_budget);
    std::vector<CellKind> prefix;
    for (CellKind k : r.spec.layers) {
      prefix.push_back(k);
      CHECK(rejected.count(prefix) == 0);
    }
  }
}

TEST_CASE("transcripts are deterministic") {
  MemoryBank bank;
  EvalRecord rec;
  rec.round = 1;
  rec.spec = uniform_spec(CellKind::TTS);
  rec.metrics.mae = 2;
  bank.insert(rec);
  for (ThoughtMode mode : {ThoughtMode::COT, ThoughtMode::TOT}) {
    auto run = [&] {
      ScriptedBackend backend(ScriptedPolicy{thought_mode_name(mode), {std::string("x")}}, 5);
      GenerationConfig cfg;
      cfg.seed = 6;
      return generate(mode, backend, Stage::Explore, bank, 3, 15, cfg);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.spec == b.spec);
    CHECK(a.transcript == b.transcript);
    CHECK(transcript_digest(a.transcript) == transcript_digest(b.transcript));
  }
  CHECK(transcript_digest({}) != transcript_digest({Exchange{}}));
}
