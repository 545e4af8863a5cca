#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stnas/backend.hpp"
#include "stnas/errors.hpp"
#include "stnas/response_parser.hpp"

using namespace stnas;

namespace {

ChatRequest request(ExchangeKind kind, std::vector<CellKind> prefix = {}) {
  return ChatRequest{"system", "user", kind, std::move(prefix)};
}

// Local OpenAI-style endpoint. Fails the first `failures` requests with 500.
class StubServer {
 public:
  explicit StubServer(int failures) : failures_(failures) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      if (hits_++ < failures_) {
        res.status = 500;
        return;
      }
      nlohmann::json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "fixed body"}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_; }

  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int failures_;
  std::atomic<int> hits_{0};
};

RemoteConfig fast_config(const std::string& url) {
  RemoteConfig cfg;
  cfg.base_url = url;
  cfg.timeout = std::chrono::milliseconds(2000);
  cfg.backoff = std::chrono::milliseconds(1);
  return cfg;
}

}  // namespace

TEST_CASE("remote backend against a stub server") {
  SUBCASE("returns the message content") {
    StubServer stub(0);
    setenv("STNAS_TEST_KEY", "k123", 1);
    RemoteConfig cfg = fast_config(stub.url());
    cfg.api_key_env = "STNAS_TEST_KEY";
    RemoteBackend backend(cfg);
    CHECK(backend.chat(request(ExchangeKind::Architecture)) == "fixed body");
    CHECK(backend.attempts_made() == 1);
    CHECK(stub.last_auth == "Bearer k123");
    const auto body = nlohmann::json::parse(stub.last_body);
    CHECK(body["model"] == cfg.model);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "user");
  }

  SUBCASE("non-2xx answers are retried") {
    StubServer stub(2);
    RemoteBackend backend(fast_config(stub.url()));
    CHECK(backend.chat(request(ExchangeKind::Architecture)) == "fixed body");
    CHECK(backend.attempts_made() == 3);
  }

  SUBCASE("retries are bounded and report the last status") {
    StubServer stub(10);
    RemoteBackend backend(fast_config(stub.url()));
    try {
      backend.chat(request(ExchangeKind::Architecture));
      FAIL("expected a backend error");
    } catch (const BackendError& e) {
      CHECK(e.last_status() == 500);
    }
    CHECK(stub.hits() == 3);
  }
}

TEST_CASE("remote backend with an unreachable host") {
  // Port 1 on loopback refuses connections immediately.
  RemoteBackend backend(fast_config("http://127.0.0.1:1/v1"));
  CHECK_THROWS_AS(backend.chat(request(ExchangeKind::Architecture)), BackendError);
  CHECK(backend.attempts_made() == 3);

  CHECK_THROWS_AS(RemoteBackend(fast_config("not a url")).chat(request(ExchangeKind::Architecture)), ConfigError);
  RemoteConfig none = fast_config("http://127.0.0.1:1");
  none.max_retries = 0;
  CHECK_THROWS_AS(RemoteBackend{none}, ConfigError);
}

TEST_CASE("scripted backend") {
  const ArchSpec a = arch_from_short_string("STP,TTS,STT,STP,TTS,STT");

  SUBCASE("cot answers in order, then seeded random") {
    ScriptedBackend backend(ScriptedPolicy{"cot", {a, std::string("garbage")}}, 7);
    CHECK(parse_arch_spec(backend.chat(request(ExchangeKind::Architecture))) == a);
    CHECK(backend.chat(request(ExchangeKind::Architecture)) == "garbage");
    CHECK(backend.remaining() == 0);
    CHECK_FALSE(backend.exhausted_warning_logged());
    const std::string r1 = backend.chat(request(ExchangeKind::Architecture));
    CHECK_NOTHROW(parse_arch_spec(r1));
    CHECK(backend.exhausted_warning_logged());
    CHECK(backend.calls() == 3);

    ScriptedBackend again(ScriptedPolicy{"cot", {a, std::string("garbage")}}, 7);
    for (int i = 0; i < 2; ++i) again.chat(request(ExchangeKind::Architecture));
    CHECK(again.chat(request(ExchangeKind::Architecture)) == r1);
  }

  SUBCASE("tot pairs answer a layer and its judgment") {
    ScriptedBackend backend(ScriptedPolicy{"tot", {TotAnswer{CellKind::STT, false}, TotAnswer{CellKind::TTS, true}}});
    CHECK(parse_layer_response(backend.chat(request(ExchangeKind::Layer))) == CellKind::STT);
    CHECK_FALSE(parse_judgment(backend.chat(request(ExchangeKind::Judgment, {CellKind::STT}))));
    CHECK(parse_layer_response(backend.chat(request(ExchangeKind::Layer))) == CellKind::TTS);
    CHECK(parse_judgment(backend.chat(request(ExchangeKind::Judgment, {CellKind::TTS}))));
    CHECK(backend.remaining() == 0);
  }

  SUBCASE("a judge overrides judgments") {
    ScriptedBackend backend(ScriptedPolicy{"tot", {TotAnswer{CellKind::STT, true}}}, 0,
                            [](const std::vector<CellKind>& prefix) { return prefix.front() != CellKind::STT; });
    backend.chat(request(ExchangeKind::Layer));
    CHECK_FALSE(parse_judgment(backend.chat(request(ExchangeKind::Judgment, {CellKind::STT}))));
    CHECK(parse_judgment(backend.chat(request(ExchangeKind::Judgment, {CellKind::TTS}))));
  }
}

TEST_CASE("scripted policy files") {
  const ScriptedPolicy p = parse_scripted_policy(R"({"mode": "tot", "answers": [
      {"layer": "STT", "judgment": "impossible"},
      {"layer": "temporal-then-spatial"},
      {"Combination of modules": {"Layer_1": "STP", "Layer_2": "STP", "Layer_3": "STP",
                                  "Layer_4": "STP", "Layer_5": "STP", "Layer_6": "STP"}},
      "raw text"]})");
  CHECK(p.mode == "tot");
  REQUIRE(p.answers.size() == 4);
  CHECK_FALSE(std::get<TotAnswer>(p.answers[0]).possible);
  CHECK(std::get<TotAnswer>(p.answers[1]).layer == CellKind::TTS);
  CHECK(std::get<ArchSpec>(p.answers[2]) == uniform_spec(CellKind::STP));
  CHECK(std::get<std::string>(p.answers[3]) == "raw text");

  CHECK_THROWS_AS(parse_scripted_policy("[]"), ParseError);
  CHECK_THROWS_AS(parse_scripted_policy(R"({"mode": "bfs", "answers": []})"), ParseError);
  CHECK_THROWS_AS(parse_scripted_policy(R"({"answers": [{"layer": "x"}]})"), ParseError);
  CHECK_THROWS_AS(parse_scripted_policy(R"({"answers": [{"layer": "STT", "judgment": "maybe"}]})"), ParseError);
  CHECK_THROWS_AS(parse_scripted_policy(R"({"answers": [3]})"), ParseError);
  CHECK_THROWS_AS(load_scripted_policy("/nonexistent/policy.json"), ConfigError);
}
