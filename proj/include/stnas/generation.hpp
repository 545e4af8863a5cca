#pragma once

// Architecture proposal by the policy model: whole-architecture (COT) and
// layer-by-layer depth-first (TOT) generation with bounded retries.

#include <cstdint>
#include <string>
#include <vector>

#include "stnas/backend.hpp"
#include "stnas/bank.hpp"
#include "stnas/prompts.hpp"

namespace stnas {

struct Exchange {
  ExchangeKind kind = ExchangeKind::Architecture;
  std::string system;
  std::string user;
  std::string response;

  friend bool operator==(const Exchange&, const Exchange&) = default;
};

struct GenerationConfig {
  int parse_retries = 3;    // COT re-prompts after unparseable answers
  int novelty_retries = 1;  // COT Explore re-prompts for a spec already in the bank
  int branch_width = 3;     // TOT generation attempts per depth
  int exchange_budget = 60; // TOT calls per round
  std::uint64_t seed = 0;   // fallback randomness
  HistoryOrder history_order = HistoryOrder::WorstFirst;
  std::string dataset_description = kDefaultDatasetDescription;
};

struct GenerationResult {
  ArchSpec spec;
  std::vector<Exchange> transcript;
  bool fallback = false;  // spec is the seeded-random fallback
  std::vector<std::string> warnings;
};

GenerationResult generate_cot(PolicyBackend& backend, Stage stage, const MemoryBank& bank, int t, int total,
                              const GenerationConfig& cfg = {});

GenerationResult generate_tot(PolicyBackend& backend, Stage stage, const MemoryBank& bank, int t, int total,
                              const GenerationConfig& cfg = {});

GenerationResult generate(ThoughtMode mode, PolicyBackend& backend, Stage stage, const MemoryBank& bank, int t,
                          int total, const GenerationConfig& cfg = {});

// Suffixes appended to the instruction when re-prompting.
std::string parse_retry_suffix(const std::string& defect);
std::string novelty_retry_suffix(const ArchSpec& duplicate);

// 64-bit FNV-1a over kinds, prompts and responses of a transcript.
std::uint64_t transcript_digest(const std::vector<Exchange>& transcript);

}  // namespace stnas
