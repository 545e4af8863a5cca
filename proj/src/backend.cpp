#include "stnas/backend.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "stnas/errors.hpp"
#include "stnas/response_parser.hpp"

namespace stnas {

const char* exchange_kind_name(ExchangeKind kind) {
  switch (kind) {
    case ExchangeKind::Architecture: return "architecture";
    case ExchangeKind::Layer: return "layer";
    case ExchangeKind::Judgment: return "judgment";
  }
  return "";
}

ExchangeKind exchange_kind_from_name(const std::string& name) {
  if (name == "architecture") return ExchangeKind::Architecture;
  if (name == "layer") return ExchangeKind::Layer;
  if (name == "judgment") return ExchangeKind::Judgment;
  throw ParseError("unknown exchange kind \"" + name + "\"");
}

// ---------------------------------------------------------------------------
// Remote
// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.max_retries < 1) throw ConfigError("max_retries must be at least 1");
}

std::string RemoteBackend::chat(const ChatRequest& request) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.base_url, m, url_re)) throw ConfigError("invalid LLM base URL \"" + cfg_.base_url + "\"");
  std::string path = m[2].matched ? m[2].str() : "";
  while (!path.empty() && path.back() == '/') path.pop_back();
  path += "/chat/completions";

  httplib::Client client(m[1].str());
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::json body;
  body["model"] = cfg_.model;
  body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", request.system}},
                                            {{"role", "user"}, {"content", request.user}}});
  body["temperature"] = cfg_.temperature;
  const std::string payload = body.dump();

  int last_status = 0;
  std::string last_error;
  auto delay = cfg_.backoff;
  for (int attempt = 1; attempt <= cfg_.max_retries; ++attempt) {
    ++attempts_;
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status < 200 || res->status >= 300) {
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_status = res->status;
      auto reply = nlohmann::json::parse(res->body, nullptr, false);
      try {
        if (!reply.is_discarded()) return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
      }
      last_error = "response has no choices[0].message.content";
    }
    spdlog::warn("LLM request attempt {}/{} failed: {}", attempt, cfg_.max_retries, last_error);
    if (attempt < cfg_.max_retries) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw BackendError("LLM request failed after " + std::to_string(cfg_.max_retries) + " attempts: " + last_error,
                     last_status);
}

// ---------------------------------------------------------------------------
// Scripted
// ---------------------------------------------------------------------------

ScriptedPolicy parse_scripted_policy(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("scripted policy is not a JSON object");
  ScriptedPolicy p;
  if (j.contains("mode")) {
    if (!j["mode"].is_string()) throw ParseError("\"mode\" must be a string");
    p.mode = j["mode"].get<std::string>();
    if (p.mode != "cot" && p.mode != "tot") throw ParseError("\"mode\" must be cot or tot");
  }
  if (!j.contains("answers") || !j["answers"].is_array()) throw ParseError("missing \"answers\" array");
  std::size_t index = 0;
  for (const auto& a : j["answers"]) {
    ++index;
    const std::string where = "answer " + std::to_string(index) + ": ";
    if (a.is_string()) {
      p.answers.emplace_back(a.get<std::string>());
    } else if (a.is_object() && a.contains("layer")) {
      TotAnswer t;
      auto kind = a["layer"].is_string() ? cell_kind_from_name(a["layer"].get<std::string>()) : std::nullopt;
      if (!kind) throw ParseError(where + "unknown layer");
      t.layer = *kind;
      const std::string judgment = a.value("judgment", std::string("possible"));
      if (judgment != "possible" && judgment != "impossible") throw ParseError(where + "judgment must be possible or impossible");
      t.possible = judgment == "possible";
      p.answers.emplace_back(t);
    } else if (a.is_object()) {
      const nlohmann::json& layers = a.contains("Combination of modules") ? a["Combination of modules"] : a;
      try {
        p.answers.emplace_back(arch_from_json(layers));
      } catch (const ParseError& e) {
        throw ParseError(where + e.what());
      }
    } else {
      throw ParseError(where + "expected an object or a string");
    }
  }
  return p;
}

ScriptedPolicy load_scripted_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scripted policy " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scripted_policy(ss.str());
}

ScriptedBackend::ScriptedBackend(ScriptedPolicy policy, std::uint64_t seed, Judge judge)
    : policy_(std::move(policy)), rng_(seed), judge_(std::move(judge)) {}

std::string ScriptedBackend::random_answer(ExchangeKind kind) {
  std::uniform_int_distribution<int> pick(0, 2);
  switch (kind) {
    case ExchangeKind::Architecture: {
      ArchSpec spec;
      for (auto& layer : spec.layers) layer = static_cast<CellKind>(pick(rng_));
      return format_arch_response(spec, "random answer after the script ran out");
    }
    case ExchangeKind::Layer:
      return format_layer_response(static_cast<CellKind>(pick(rng_)), "random answer after the script ran out");
    case ExchangeKind::Judgment:
      return format_judgment_response(true, "random answer after the script ran out");
  }
  return {};
}

std::string ScriptedBackend::chat(const ChatRequest& request) {
  ++calls_;
  if (request.kind == ExchangeKind::Judgment && judge_) {
    if (pending_judgment_) {
      pending_judgment_ = false;
      ++next_;
    }
    return format_judgment_response(judge_(request.prefix), "scripted judge");
  }
  if (request.kind == ExchangeKind::Layer && pending_judgment_) {
    pending_judgment_ = false;  // the previous layer was never judged
    ++next_;
  }
  if (next_ >= policy_.answers.size()) {
    if (!warned_) {
      spdlog::warn("scripted policy exhausted after {} answers; using seeded random answers",
                   policy_.answers.size());
      warned_ = true;
    }
    return random_answer(request.kind);
  }
  const ScriptedAnswer& answer = policy_.answers[next_];
  if (const auto* raw = std::get_if<std::string>(&answer)) {
    ++next_;
    return *raw;
  }
  if (const auto* spec = std::get_if<ArchSpec>(&answer)) {
    ++next_;
    return format_arch_response(*spec, "scripted answer");
  }
  const auto& tot = std::get<TotAnswer>(answer);
  if (request.kind == ExchangeKind::Layer) {
    pending_judgment_ = true;
    return format_layer_response(tot.layer, "scripted answer");
  }
  ++next_;
  pending_judgment_ = false;
  if (request.kind == ExchangeKind::Judgment) return format_judgment_response(tot.possible, "scripted answer");
  return format_layer_response(tot.layer, "scripted answer");
}

}  // namespace stnas
