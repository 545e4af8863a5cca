#pragma once

// Chat backends that answer policy prompts: an OpenAI-compatible HTTP client
// and a deterministic scripted stand-in.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "stnas/arch.hpp"

namespace stnas {

// The answer shape a prompt asks for.
enum class ExchangeKind { Architecture, Layer, Judgment };
const char* exchange_kind_name(ExchangeKind kind);
ExchangeKind exchange_kind_from_name(const std::string& name);

struct ChatRequest {
  std::string system;
  std::string user;
  ExchangeKind kind = ExchangeKind::Architecture;
  std::vector<CellKind> prefix;  // layers under judgment (Judgment requests only)
};

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual std::string chat(const ChatRequest& request) = 0;
};

struct RemoteConfig {
  std::string base_url = "http://localhost:8000/v1";
  std::string model = "llama-3-8b-instruct";
  std::string api_key_env = "LLM_API_KEY";
  double temperature = 0.7;
  std::chrono::milliseconds timeout{120000};
  int max_retries = 3;  // total attempts
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
};

// POST {base_url}/chat/completions with [system, user] messages; returns
// choices[0].message.content. Throws BackendError once all attempts fail.
class RemoteBackend : public PolicyBackend {
 public:
  explicit RemoteBackend(RemoteConfig cfg);
  std::string chat(const ChatRequest& request) override;
  int attempts_made() const noexcept { return attempts_; }

 private:
  RemoteConfig cfg_;
  int attempts_ = 0;
};

struct TotAnswer {
  CellKind layer = CellKind::STP;
  bool possible = true;
};

// An ArchSpec (COT), a layer/judgment pair (TOT) or raw text returned verbatim.
using ScriptedAnswer = std::variant<ArchSpec, TotAnswer, std::string>;

struct ScriptedPolicy {
  std::string mode = "cot";
  std::vector<ScriptedAnswer> answers;
};

// {"mode": "cot"|"tot", "answers": [...]}; answers are ArchSpec objects,
// {"layer", "judgment"} objects or strings.
ScriptedPolicy parse_scripted_policy(const std::string& text);
ScriptedPolicy load_scripted_policy(const std::filesystem::path& path);

// Serves the script in order. A TOT pair answers one Layer request and the
// Judgment request that follows it. Once exhausted, answers with seeded
// random valid responses and logs a warning. An optional judge overrides
// judgments from the prefix under evaluation.
class ScriptedBackend : public PolicyBackend {
 public:
  using Judge = std::function<bool(const std::vector<CellKind>& prefix)>;

  explicit ScriptedBackend(ScriptedPolicy policy, std::uint64_t seed = 0, Judge judge = {});
  std::string chat(const ChatRequest& request) override;

  std::size_t calls() const noexcept { return calls_; }
  std::size_t remaining() const noexcept { return policy_.answers.size() - next_; }
  bool exhausted_warning_logged() const noexcept { return warned_; }

 private:
  std::string random_answer(ExchangeKind kind);

  ScriptedPolicy policy_;
  std::size_t next_ = 0;
  std::size_t calls_ = 0;
  bool pending_judgment_ = false;  // the current TOT pair still owes its judgment
  bool warned_ = false;
  std::mt19937_64 rng_;
  Judge judge_;
};

}  // namespace stnas
