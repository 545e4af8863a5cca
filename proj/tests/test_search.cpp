#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "stnas/errors.hpp"
#include "stnas/search.hpp"
#include "support.hpp"

using namespace stnas;
using stnas::test::tiny_run_config;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string strip_wall_time(const std::string& text) {
  static const std::regex field(R"("wall_time_ms":[-0-9.eE+]+)");
  return std::regex_replace(text, field, R"("wall_time_ms":0)");
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "stnas_test_search" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<ScriptedAnswer> distinct_answers(std::size_t n, std::size_t stride = 37) {
  const auto space = enumerate_space();
  std::vector<ScriptedAnswer> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(space[(i * stride + 5) % space.size()]);
  return out;
}

SearchResult scripted_run(const RunConfig& cfg, const PreparedData& data, std::vector<ScriptedAnswer> answers) {
  ScriptedBackend backend(ScriptedPolicy{thought_mode_name(cfg.mode), std::move(answers)}, 11);
  return run_search(cfg, backend, data);
}

}  // namespace

TEST_CASE("run configuration") {
  RunConfig cfg;
  apply_config_text(cfg, "# comment\nsynthetic = 8:2000\nrounds=12  # trailing\nmode=tot\nlr=0.01\n\n");
  CHECK(cfg.data.synthetic_nodes == 8);
  CHECK(cfg.data.synthetic_steps == 2000);
  CHECK(cfg.plan.total_rounds == 12);
  CHECK(cfg.mode == ThoughtMode::TOT);
  CHECK(cfg.train.learning_rate == 0.01);
  CHECK_NOTHROW(cfg.validate());

  RunConfig copy;
  apply_config_text(copy, to_config_text(cfg));
  CHECK(to_config_text(copy) == to_config_text(cfg));

  CHECK_THROWS_WITH_AS(apply_config_text(cfg, "rounds=3\nfoo=1"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "rounds"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "rounds", "many"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "synthetic", "8"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "history-order", "random"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), ConfigError);

  CHECK_THROWS_AS(RunConfig{}.validate(), ConfigError);
  RunConfig missing;
  missing.data.readings = "/nonexistent/r.csv";
  missing.data.adjacency = "/nonexistent/a.csv";
  CHECK_THROWS_AS(missing.validate(), ConfigError);
  RunConfig bad = tiny_run_config();
  bad.plan.total_rounds = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_run_config();
  apply_setting(bad, "scripted", "/nonexistent/policy.json");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(make_backend(tiny_run_config()), ConfigError);
}

TEST_CASE("search loop") {
  const RunConfig cfg = tiny_run_config();
  const PreparedData data = prepare_data(cfg);

  SUBCASE("one record per round and the scan minimum wins") {
    const SearchResult r = scripted_run(cfg, data, distinct_answers(5));
    REQUIRE(r.log.rounds.size() == 5);
    CHECK(r.bank.size() == 5);
    int explore = 0;
    for (const auto& e : r.log.rounds) {
      explore += e.stage == Stage::Explore;
      CHECK(e.llm_call_count == 1);
      CHECK_FALSE(e.fallback);
    }
    CHECK(explore == 3);
    const auto scan = std::min_element(r.log.rounds.begin(), r.log.rounds.end(),
                                       [](const auto& a, const auto& b) { return a.metrics.mae < b.metrics.mae; });
    CHECK(r.best == scan->spec);
    CHECK(r.metrics.mae == scan->metrics.mae);
    CHECK(r.log.best == r.bank.best().spec);
    CHECK(r.log.best_test_metrics.has_value());
    CHECK(RunLog::from_jsonl(r.log.to_jsonl()).to_jsonl() == r.log.to_jsonl());
  }

  SUBCASE("a single round") {
    RunConfig one = cfg;
    one.plan.total_rounds = 1;
    const SearchResult r = scripted_run(one, data, distinct_answers(1));
    CHECK(r.bank.size() == 1);
    CHECK(r.best == r.log.rounds[0].spec);
  }

  SUBCASE("duplicates are re-evaluated with a fresh seed and match the sweep") {
    RunConfig two = cfg;
    two.plan.total_rounds = 2;
    two.plan.explore_ratio = 0;
    const ArchSpec spec = uniform_spec(CellKind::TTS);
    const SearchResult r = scripted_run(two, data, {spec, spec});
    REQUIRE(r.bank.size() == 2);
    CHECK(r.log.rounds[0].model_seed == evaluation_seed(two.seed, spec, 0));
    CHECK(r.log.rounds[1].model_seed == evaluation_seed(two.seed, spec, 1));
    const auto rows = sweep(data, two.train, two.seed, {spec});
    CHECK(rows[0].metrics.mae == r.log.rounds[0].metrics.mae);
  }

  SUBCASE("unusable answers still finish the run") {
    RunConfig garbage = cfg;
    garbage.plan.total_rounds = 2;
    const SearchResult r = scripted_run(garbage, data, std::vector<ScriptedAnswer>(8, std::string("no idea")));
    REQUIRE(r.log.rounds.size() == 2);
    for (const auto& e : r.log.rounds) {
      CHECK(e.fallback);
      CHECK(e.llm_call_count == 4);
    }
  }

  SUBCASE("diverged rounds score the sentinel and the run continues") {
    RunConfig wild = cfg;
    wild.plan.total_rounds = 2;
    wild.train.learning_rate = 1e300;
    wild.train.max_steps = 6;
    const SearchResult r = scripted_run(wild, data, distinct_answers(2));
    REQUIRE(r.log.rounds.size() == 2);
    for (const auto& e : r.log.rounds) {
      CHECK(e.diverged);
      CHECK(std::isinf(e.metrics.mae));
    }
  }

  SUBCASE("tot mode") {
    RunConfig tot = cfg;
    tot.mode = ThoughtMode::TOT;
    tot.plan.total_rounds = 2;
    const SearchResult r = scripted_run(tot, data, {});
    CHECK(r.log.rounds.size() == 2);
    for (const auto& e : r.log.rounds) CHECK(e.llm_call_count >= 12);
  }
}

TEST_CASE("persisted runs are deterministic and replayable") {
  const auto base = fresh_dir("det");
  std::filesystem::create_directories(base);
  const auto policy = base / "policy.json";
  std::ofstream(policy) << R"({"mode": "cot", "answers": ["garbage", "STP,STP,STP,STP,STP,STP",)"
                        << R"( {"Layer_1": "STT", "Layer_2": "TTS", "Layer_3": "STP", "Layer_4": "STT",)"
                        << R"( "Layer_5": "TTS", "Layer_6": "STP"}]})";
  RunConfig cfg = tiny_run_config();
  cfg.plan.total_rounds = 4;
  apply_setting(cfg, "scripted", policy.string());

  cfg.output_dir = base / "a";
  const SearchResult a = run_search(cfg);
  cfg.output_dir = base / "b";
  const SearchResult b = run_search(cfg);

  for (const char* f : {"config.txt", "log.jsonl", "bank.jsonl", "transcript.jsonl"}) {
    CAPTURE(f);
    REQUIRE(std::filesystem::exists(base / "a" / f));
  }
  CHECK(read_file(base / "a" / "bank.jsonl") == read_file(base / "b" / "bank.jsonl"));
  CHECK(strip_wall_time(read_file(base / "a" / "log.jsonl")) == strip_wall_time(read_file(base / "b" / "log.jsonl")));
  CHECK(read_file(base / "a" / "transcript.jsonl") == read_file(base / "b" / "transcript.jsonl"));
  CHECK(MemoryBank::load(base / "a" / "bank.jsonl") == a.bank);
  // Round 1 consumes the whole script; later rounds use the seeded random answers.
  CHECK(a.log.rounds[2].spec == b.log.rounds[2].spec);

  const ReplayReport ok = replay_run(base / "a");
  CHECK(ok.ok());
  CHECK(ok.rounds == 4);
  CHECK(ok.prompts_checked == 6);
  CHECK(a.log.rounds[0].llm_call_count == 3);

  std::string transcript = read_file(base / "b" / "transcript.jsonl");
  const auto at = transcript.find("this is the 3 round");
  REQUIRE(at != std::string::npos);
  transcript.replace(at, 19, "this is the 9 round");
  std::ofstream(base / "b" / "transcript.jsonl", std::ios::binary) << transcript;
  const ReplayReport bad = replay_run(base / "b");
  CHECK_FALSE(bad.ok());
  CHECK(bad.mismatches.front().find("round 3") != std::string::npos);
}
