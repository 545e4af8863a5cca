#pragma once

// Experience store of evaluated architectures, kept sorted by validation MAE.

#include <filesystem>
#include <string>
#include <vector>

#include "stnas/arch.hpp"
#include "stnas/training.hpp"

namespace stnas {

enum class Stage { Explore, Optimize };
const char* stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

struct EvalRecord {
  int round = 0;  // 1-based
  ArchSpec spec;
  Metrics metrics;
  Stage stage = Stage::Explore;

  // Compares the persisted fields; metrics.window_count is not stored.
  friend bool operator==(const EvalRecord& a, const EvalRecord& b) {
    return a.round == b.round && a.spec == b.spec && a.stage == b.stage &&
           a.metrics.mae == b.metrics.mae && a.metrics.mape == b.metrics.mape &&
           a.metrics.rmse == b.metrics.rmse;
  }
};

enum class HistoryOrder { WorstFirst, BestFirst };

class MemoryBank {
 public:
  // Keeps MAE non-increasing front to back; equal MAEs stay in round order.
  // Throws ContractError on a duplicate round.
  void insert(const EvalRecord& record);

  const std::vector<EvalRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  bool contains(const ArchSpec& spec) const;
  // Minimum-MAE record. Throws EmptyBankError when empty.
  const EvalRecord& best() const;

  // One "Round r: {...} -> MAE m, MAPE p%, RMSE q" line per record, or
  // "(no samples yet)".
  std::string render_history(HistoryOrder order = HistoryOrder::WorstFirst) const;

  // JSON lines with fields round, stage, layers, mae, mape, rmse.
  void persist(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);
  std::string to_jsonl() const;
  static MemoryBank from_jsonl(const std::string& text);

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  std::vector<EvalRecord> records_;
};

std::string render_record(const EvalRecord& record);

}  // namespace stnas
