#include "stnas/generation.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <optional>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "stnas/errors.hpp"
#include "stnas/response_parser.hpp"

namespace stnas {

namespace {

using Prefix = std::vector<CellKind>;

ArchSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  ArchSpec spec;
  for (auto& layer : spec.layers) layer = static_cast<CellKind>(pick(rng));
  return spec;
}

// Random spec that avoids every (prefix, layer) pair judged impossible.
std::optional<ArchSpec> random_spec_avoiding(const std::set<Prefix>& rejected, std::mt19937_64& rng) {
  Prefix prefix;
  std::function<bool()> extend = [&]() {
    if (prefix.size() == kLayerCount) return true;
    std::array<CellKind, 3> order = kCellKinds;
    std::shuffle(order.begin(), order.end(), rng);
    for (CellKind k : order) {
      prefix.push_back(k);
      if (!rejected.count(prefix) && extend()) return true;
      prefix.pop_back();
    }
    return false;
  };
  if (!extend()) return std::nullopt;
  ArchSpec spec;
  std::copy(prefix.begin(), prefix.end(), spec.layers.begin());
  return spec;
}

class Session {
 public:
  Session(PolicyBackend& backend, const MemoryBank& bank, const GenerationConfig& cfg)
      : backend_(backend), system_(render_background(bank.render_history(cfg.history_order), cfg.dataset_description)) {}

  std::string ask(ExchangeKind kind, const std::string& user, const Prefix& prefix = {}) {
    ChatRequest req{system_, user, kind, prefix};
    std::string response = backend_.chat(req);
    result.transcript.push_back({kind, system_, user, response});
    return response;
  }

  void warn(const std::string& message) {
    spdlog::warn("{}", message);
    result.warnings.push_back(message);
  }

  std::size_t calls() const { return result.transcript.size(); }

  GenerationResult result;

 private:
  PolicyBackend& backend_;
  std::string system_;
};

}  // namespace

std::string parse_retry_suffix(const std::string& defect) {
  return "\nYour previous response could not be used (" + defect +
         "). Provide no additional text in response and follow the JSON format exactly.";
}

std::string novelty_retry_suffix(const ArchSpec& duplicate) {
  return "\nThe combination " + to_json_text(duplicate) +
         " already exists in historical samples. Design a new combination that is not existed in "
         "historical samples.";
}

GenerationResult generate_cot(PolicyBackend& backend, Stage stage, const MemoryBank& bank, int t, int total,
                              const GenerationConfig& cfg) {
  Session s(backend, bank, cfg);
  const std::string instruction = render_cot(stage, t, total);
  std::string suffix;
  int parse_failures = 0, novelty_used = 0;
  while (true) {
    const std::string response = s.ask(ExchangeKind::Architecture, instruction + suffix);
    ArchSpec spec;
    try {
      spec = parse_arch_spec(response);
    } catch (const ParseError& e) {
      if (++parse_failures > cfg.parse_retries) {
        std::mt19937_64 rng(cfg.seed);
        s.result.spec = random_spec(rng);
        s.result.fallback = true;
        s.warn("round " + std::to_string(t) + ": no parseable answer after " + std::to_string(parse_failures) +
               " attempts; using random spec " + to_short_string(s.result.spec));
        return std::move(s.result);
      }
      suffix = parse_retry_suffix(e.what());
      continue;
    }
    if (stage == Stage::Explore && bank.contains(spec) && novelty_used < cfg.novelty_retries) {
      ++novelty_used;
      suffix = novelty_retry_suffix(spec);
      continue;
    }
    s.result.spec = spec;
    return std::move(s.result);
  }
}

GenerationResult generate_tot(PolicyBackend& backend, Stage /*stage*/, const MemoryBank& bank, int t,
                              int /*total*/, const GenerationConfig& cfg) {
  Session s(backend, bank, cfg);
  std::set<Prefix> rejected;
  bool out_of_budget = false;
  Prefix prefix;

  std::function<bool()> descend = [&]() -> bool {
    if (prefix.size() == kLayerCount) return true;
    for (int attempt = 0; attempt < cfg.branch_width; ++attempt) {
      if (static_cast<int>(s.calls()) >= cfg.exchange_budget) {
        out_of_budget = true;
        return false;
      }
      CellKind layer;
      try {
        layer = parse_layer_response(s.ask(ExchangeKind::Layer, render_tot_generate(prefix)));
      } catch (const ParseError&) {
        continue;  // counts as a failed attempt
      }
      prefix.push_back(layer);
      if (rejected.count(prefix)) {
        prefix.pop_back();
        continue;
      }
      if (static_cast<int>(s.calls()) >= cfg.exchange_budget) {
        out_of_budget = true;
        prefix.pop_back();
        return false;
      }
      bool possible = false;
      try {
        possible = parse_judgment(s.ask(ExchangeKind::Judgment, render_tot_evaluate(prefix), prefix));
      } catch (const ParseError&) {
        possible = false;
      }
      if (possible && descend()) return true;
      if (out_of_budget) return false;
      if (!possible) rejected.insert(prefix);
      prefix.pop_back();
    }
    return false;
  };

  if (descend()) {
    std::copy(prefix.begin(), prefix.end(), s.result.spec.layers.begin());
    return std::move(s.result);
  }
  std::mt19937_64 rng(cfg.seed);
  auto spec = random_spec_avoiding(rejected, rng);
  s.result.spec = spec ? *spec : random_spec(rng);
  s.result.fallback = true;
  s.warn("round " + std::to_string(t) + ": tree search " +
         (out_of_budget ? "exhausted the exchange budget" : "found no accepted architecture") +
         "; using random spec " + to_short_string(s.result.spec));
  return std::move(s.result);
}

GenerationResult generate(ThoughtMode mode, PolicyBackend& backend, Stage stage, const MemoryBank& bank, int t,
                          int total, const GenerationConfig& cfg) {
  return mode == ThoughtMode::COT ? generate_cot(backend, stage, bank, t, total, cfg)
                                  : generate_tot(backend, stage, bank, t, total, cfg);
}

std::uint64_t transcript_digest(const std::vector<Exchange>& transcript) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&](std::string_view bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;  // field separator
    h *= 1099511628211ull;
  };
  for (const auto& e : transcript) {
    mix(exchange_kind_name(e.kind));
    mix(e.system);
    mix(e.user);
    mix(e.response);
  }
  return h;
}

}  // namespace stnas
