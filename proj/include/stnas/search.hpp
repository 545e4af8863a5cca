#pragma once

// The search loop: propose, quick-tune, evaluate, remember. Also the
// exhaustive sweep used as an oracle and run persistence/replay.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stnas/backend.hpp"
#include "stnas/bank.hpp"
#include "stnas/data.hpp"
#include "stnas/generation.hpp"
#include "stnas/prompts.hpp"
#include "stnas/training.hpp"

namespace stnas {

struct DataSource {
  std::filesystem::path readings;
  std::filesystem::path adjacency;
  std::size_t synthetic_nodes = 0;  // > 0 selects the synthetic generator
  std::size_t synthetic_steps = 0;

  bool synthetic() const noexcept { return synthetic_nodes > 0; }
};

enum class BackendKind { None, Scripted, Remote };

struct BackendConfig {
  BackendKind kind = BackendKind::None;
  std::filesystem::path scripted_path;
  RemoteConfig remote;
};

struct RunConfig {
  DataSource data;
  ModelConfig model;
  TrainConfig train;
  StagePlan plan;
  ThoughtMode mode = ThoughtMode::COT;
  BackendConfig backend;
  GenerationConfig generation;
  std::uint64_t seed = 7;
  std::filesystem::path output_dir;
  int threads = 0;  // sweep workers; 0 = OpenMP default

  // Throws ConfigError for missing data, absent files or invalid values.
  void validate() const;
};

// Applies one key=value setting (keys as in the CLI long flags, e.g.
// "explore-ratio"). Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// Line-oriented key=value text; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Every setting as key=value lines, in a fixed order.
std::string to_config_text(const RunConfig& cfg);

struct PreparedData {
  RawDataset raw;
  DatasetSplits splits;
  AdjacencySet adjacency;
  ModelConfig model;  // the run's model config with nodes filled in
};

PreparedData prepare_data(const RunConfig& cfg);

// Seed for the k-th evaluation (0-based) of `spec` within a run.
std::uint64_t evaluation_seed(std::uint64_t run_seed, const ArchSpec& spec, std::size_t occurrence);

struct SpecEvaluation {
  Metrics valid;
  std::optional<Metrics> test;
  bool diverged = false;
  std::vector<double> epoch_losses;
  ModelInstance model;  // trained weights
};

// init_model + quick_tune + evaluate on the validation (and optionally test)
// split. A diverged training scores MAE = RMSE = +inf.
SpecEvaluation evaluate_spec(const ArchSpec& spec, const PreparedData& data, const TrainConfig& train,
                             std::uint64_t seed, bool with_test);

struct RoundEntry {
  int round = 0;
  Stage stage = Stage::Explore;
  ArchSpec spec;
  Metrics metrics;
  std::optional<Metrics> test_metrics;  // set on standalone evaluations only
  std::size_t llm_call_count = 0;
  bool fallback = false;
  bool diverged = false;
  std::uint64_t model_seed = 0;
  std::uint64_t transcript_digest = 0;
  double wall_time_ms = 0;
};

struct RunLog {
  std::vector<RoundEntry> rounds;
  ArchSpec best;
  Metrics best_metrics;
  std::optional<Metrics> best_test_metrics;  // test split, scored once after the last round
  Normalizer normalizer;
  double wall_time_ms = 0;

  std::string to_jsonl() const;
  static RunLog from_jsonl(const std::string& text);
};

struct SearchResult {
  ArchSpec best;
  Metrics metrics;
  RunLog log;
  MemoryBank bank;
  std::vector<std::vector<Exchange>> transcripts;  // per round
};

// The round loop. Writes config.txt, log.jsonl, bank.jsonl and
// transcript.jsonl when cfg.output_dir is set.
SearchResult run_search(const RunConfig& cfg, PolicyBackend& backend, const PreparedData& data);
// Builds the backend and data from the config.
SearchResult run_search(const RunConfig& cfg);

std::unique_ptr<PolicyBackend> make_backend(const RunConfig& cfg);

std::string transcripts_to_jsonl(const std::vector<std::vector<Exchange>>& transcripts);
std::vector<std::vector<Exchange>> transcripts_from_jsonl(const std::string& text);

struct ReplayReport {
  int rounds = 0;
  std::size_t prompts_checked = 0;
  std::vector<std::string> mismatches;

  bool ok() const noexcept { return mismatches.empty(); }
};

// Re-renders every prompt of a persisted run (config.txt, log.jsonl,
// transcript.jsonl) against the recorded responses, without model calls.
ReplayReport replay_run(const std::filesystem::path& run_dir);

struct SweepRow {
  ArchSpec spec;
  Metrics metrics;
};

// Evaluates `specs` (all 729 by default) with evaluation_seed(seed, spec, 0),
// in parallel across specs. Rows come back in input order.
std::vector<SweepRow> sweep(const PreparedData& data, const TrainConfig& train, std::uint64_t seed,
                            const std::vector<ArchSpec>& specs, int threads = 0);
// Header "layer1,...,layer6,mae,mape,rmse" plus one row per spec.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace stnas
