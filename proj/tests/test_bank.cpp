#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "stnas/bank.hpp"
#include "stnas/errors.hpp"

using namespace stnas;

namespace {

EvalRecord record(int round, double mae, const ArchSpec& spec = uniform_spec(CellKind::STT)) {
  EvalRecord r;
  r.round = round;
  r.spec = spec;
  r.metrics.mae = mae;
  r.metrics.mape = mae * 10;
  r.metrics.rmse = mae * 2;
  r.stage = round % 2 ? Stage::Explore : Stage::Optimize;
  return r;
}

std::vector<double> maes(const MemoryBank& bank) {
  std::vector<double> out;
  for (const auto& r : bank.records()) out.push_back(r.metrics.mae);
  return out;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("insert keeps worst first") {
  MemoryBank bank;
  bank.insert(record(1, 3));
  bank.insert(record(2, 1));
  bank.insert(record(3, 2));
  CHECK(maes(bank) == std::vector<double>{3, 2, 1});
  CHECK(bank.best().round == 2);

  MemoryBank single;
  single.insert(record(4, 0.5));
  CHECK(single.size() == 1);
  CHECK(single.best().round == 4);

  MemoryBank tie;
  tie.insert(record(2, 2));
  tie.insert(record(1, 2));
  CHECK(tie.records()[0].round == 1);
  CHECK(tie.records()[1].round == 2);

  CHECK_THROWS_AS(bank.insert(record(2, 7)), ContractError);
  CHECK(bank.size() == 3);
  CHECK_THROWS_AS(MemoryBank{}.best(), EmptyBankError);
}

TEST_CASE("render_history") {
  MemoryBank bank;
  CHECK(bank.render_history() == "(no samples yet)");
  bank.insert(record(1, 1.5));
  const std::string one = bank.render_history();
  CHECK(lines(one).size() == 1);
  CHECK(one.find("MAE 1.5") != std::string::npos);
  CHECK(one == "Round 1: " + to_json_text(uniform_spec(CellKind::STT)) +
                   " -> MAE 1.5000, MAPE 15.0000%, RMSE 3.0000");

  EvalRecord no_mape = record(2, 2.0);
  no_mape.metrics.mape.reset();
  bank.insert(no_mape);
  CHECK(bank.render_history().find("MAPE n/a,") != std::string::npos);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.5, 9.5);
  const auto space = enumerate_space();
  MemoryBank five;
  for (int r = 1; r <= 5; ++r) five.insert(record(r, u(rng), space[rng() % space.size()]));
  const auto worst_first = lines(five.render_history());
  const auto best_first = lines(five.render_history(HistoryOrder::BestFirst));
  REQUIRE(worst_first.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(worst_first[i] == render_record(five.records()[i]));
    CHECK(best_first[i] == worst_first[4 - i]);
  }
}

TEST_CASE("persist and load") {
  MemoryBank bank;
  bank.insert(record(1, 3.25, uniform_spec(CellKind::STP)));
  bank.insert(record(2, 1.0 / 3.0, arch_from_short_string("STP,TTS,STT,STP,TTS,STT")));
  EvalRecord odd = record(3, 2.0, uniform_spec(CellKind::TTS));
  odd.metrics.mape.reset();
  bank.insert(odd);

  const auto path = std::filesystem::temp_directory_path() / "stnas_test_bank.jsonl";
  bank.persist(path);
  const MemoryBank back = MemoryBank::load(path);
  CHECK(back == bank);

  const auto text = lines(bank.to_jsonl());
  REQUIRE(text.size() == 3);
  CHECK(text[0].rfind(R"({"round":1,"stage":"explore","layers":[)", 0) == 0);
  CHECK(text[2].find(R"("mae":0.3333333333333333)") != std::string::npos);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto j = nlohmann::json::parse(text[i]);
    CHECK(j["round"] == bank.records()[i].round);
  }

  SUBCASE("an unusable mae is written as null and read back as infinity") {
    MemoryBank b;
    b.insert(record(1, std::numeric_limits<double>::quiet_NaN()));
    b.insert(record(2, 1.0));
    CHECK(std::isinf(b.records()[0].metrics.mae));
    CHECK(std::isinf(b.records()[0].metrics.rmse));
    CHECK_FALSE(b.records()[0].metrics.mape.has_value());
    CHECK(b.to_jsonl().find(R"("mae":null)") != std::string::npos);
    CHECK(MemoryBank::from_jsonl(b.to_jsonl()) == b);
  }

  SUBCASE("malformed lines name their line number") {
    std::string good = bank.to_jsonl();
    const std::string missing = R"({"round":9,"stage":"explore","layers":["STT","STT","STT","STT","STT","STT"],"mape":1,"rmse":1})";
    try {
      MemoryBank::from_jsonl(good + "\n" + missing + "\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 5);
      CHECK(std::string(e.what()).find("mae") != std::string::npos);
    }
    CHECK_THROWS_AS(MemoryBank::from_jsonl("{not json"), ParseError);
    CHECK_THROWS_AS(MemoryBank::from_jsonl(text[0] + "\n" + text[0]), ParseError);
    CHECK_THROWS_AS(MemoryBank::load("/nonexistent/bank.jsonl"), InputError);
  }
}

TEST_CASE("random insert orders keep the invariant") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> coarse(0, 6);  // many ties
  const auto space = enumerate_space();
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<EvalRecord> recs;
    const int n = 1 + static_cast<int>(rng() % 20);
    for (int r = 1; r <= n; ++r) recs.push_back(record(r, coarse(rng) * 0.5, space[rng() % space.size()]));
    std::shuffle(recs.begin(), recs.end(), rng);
    MemoryBank bank;
    for (const auto& r : recs) bank.insert(r);

    const auto& stored = bank.records();
    for (std::size_t i = 1; i < stored.size(); ++i) {
      CHECK(stored[i - 1].metrics.mae >= stored[i].metrics.mae);
      if (stored[i - 1].metrics.mae == stored[i].metrics.mae) CHECK(stored[i - 1].round < stored[i].round);
    }

    // Linear-scan oracles.
    const auto scan_min = std::min_element(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
      return a.metrics.mae < b.metrics.mae;
    });
    CHECK(bank.best().metrics.mae == scan_min->metrics.mae);
    for (int k = 0; k < 5; ++k) {
      const ArchSpec probe = space[rng() % space.size()];
      const bool seen = std::any_of(recs.begin(), recs.end(), [&](const auto& r) { return r.spec == probe; });
      CHECK(bank.contains(probe) == seen);
    }

    MemoryBank scaled;
    for (auto r : recs) {
      r.metrics.mae *= 3.7;
      scaled.insert(r);
    }
    CHECK(scaled.best().round == bank.best().round);

    if (trial % 100 == 0) CHECK(MemoryBank::from_jsonl(bank.to_jsonl()) == bank);
  }
}
