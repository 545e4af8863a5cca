// Command-line entry point: search, enumerate, evaluate, replay.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stnas/errors.hpp"
#include "stnas/response_parser.hpp"
#include "stnas/search.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;

// Flags that map one-to-one onto apply_setting keys.
struct Flags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App* app, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option("--" + key, values[key], help));
  }

  void apply(stnas::RunConfig& cfg) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) stnas::apply_setting(cfg, key, values.at(key));
    }
  }
};

void add_data_flags(Flags& f, CLI::App* app) {
  f.add(app, "data", "readings CSV, one row per time step");
  f.add(app, "adj", "edge list CSV: from,to,weight");
  f.add(app, "synthetic", "generate a synthetic dataset N:steps instead");
  f.add(app, "seed", "run seed (default 7)");
  f.add(app, "epochs", "quick-tune epochs per candidate (default 2)");
  f.add(app, "batch-size", "mini-batch size (default 16)");
  f.add(app, "lr", "Adam learning rate (default 1e-3)");
  f.add(app, "max-steps", "stop quick-tune after this many steps (0 = no limit)");
  f.add(app, "dropout", "dropout rate (default 0.1)");
  f.add(app, "dropout-active", "apply dropout while tuning (true/false)");
  f.add(app, "hidden-size", "hidden channels C (default 16)");
  f.add(app, "attn-dim", "attention width (default 16)");
  f.add(app, "attn-heads", "attention heads (default 2)");
  f.add(app, "ffn-dim", "feed-forward width (default 32)");
  f.add(app, "graph-order", "graph convolution order (default 2)");
  f.add(app, "node-emb-dim", "adaptive adjacency embedding size (default 8)");
  f.add(app, "history", "input window S (default 12)");
  f.add(app, "horizon", "forecast horizon P (default 12)");
  f.add(app, "threads", "OpenMP threads (0 = default)");
}

void add_search_flags(Flags& f, CLI::App* app) {
  f.add(app, "rounds", "search rounds T (default 15)");
  f.add(app, "explore-ratio", "fraction of rounds in the explore stage (default 0.6)");
  f.add(app, "mode", "cot or tot");
  f.add(app, "llm-url", "OpenAI-compatible base URL, e.g. http://localhost:8000/v1");
  f.add(app, "llm-model", "model name sent to the server");
  f.add(app, "llm-api-key-env", "environment variable holding the API key (default LLM_API_KEY)");
  f.add(app, "llm-temperature", "sampling temperature (default 0.7)");
  f.add(app, "llm-timeout-ms", "per-request timeout (default 120000)");
  f.add(app, "llm-retries", "attempts per request (default 3)");
  f.add(app, "scripted", "JSON file of canned policy answers");
  f.add(app, "history-order", "worst_first or best_first");
  f.add(app, "parse-retries", "re-prompts after unparseable answers (default 3)");
  f.add(app, "novelty-retries", "re-prompts for duplicate explore proposals (default 1)");
  f.add(app, "branch-width", "TOT attempts per depth (default 3)");
  f.add(app, "exchange-budget", "TOT calls per round (default 60)");
}

stnas::RunConfig build_config(const std::string& config_path, const Flags& flags) {
  stnas::RunConfig cfg = config_path.empty() ? stnas::RunConfig{} : stnas::load_run_config(config_path);
  flags.apply(cfg);
  return cfg;
}

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::string metrics_line(const stnas::Metrics& m) {
  return fmt::format("MAE {:.4f}  MAPE {}  RMSE {:.4f}", m.mae, m.mape ? fmt::format("{:.2f}%", *m.mape) : "n/a",
                     m.rmse);
}

nlohmann::ordered_json metrics_json(const stnas::Metrics& m) {
  nlohmann::ordered_json j;
  j["mae"] = m.mae;
  j["mape"] = m.mape ? nlohmann::ordered_json(*m.mape) : nlohmann::ordered_json(nullptr);
  j["rmse"] = m.rmse;
  return j;
}

int run_search_command(const std::string& config_path, const std::string& out, const Flags& flags) {
  stnas::RunConfig cfg = build_config(config_path, flags);
  if (!out.empty()) cfg.output_dir = out;
  cfg.validate();
  set_threads(cfg.threads);
  const stnas::SearchResult r = stnas::run_search(cfg);
  std::cout << "best " << stnas::to_json_text(r.best) << "\n";
  std::cout << "valid " << metrics_line(r.metrics) << "\n";
  if (r.log.best_test_metrics) std::cout << "test  " << metrics_line(*r.log.best_test_metrics) << "\n";
  if (!cfg.output_dir.empty()) std::cout << "run written to " << cfg.output_dir.string() << "\n";
  return kExitOk;
}

int run_enumerate_command(const std::string& config_path, const std::string& out, const Flags& flags) {
  stnas::RunConfig cfg = build_config(config_path, flags);
  cfg.backend.kind = stnas::BackendKind::None;
  cfg.validate();
  const stnas::PreparedData data = stnas::prepare_data(cfg);
  const auto rows = stnas::sweep(data, cfg.train, cfg.seed, stnas::enumerate_space(), cfg.threads);
  const std::string csv = stnas::sweep_csv(rows);
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    std::ofstream f(out);
    if (!f) throw stnas::ConfigError("cannot write " + out);
    f << csv;
  }
  const auto best = std::min_element(rows.begin(), rows.end(),
                                     [](const auto& a, const auto& b) { return a.metrics.mae < b.metrics.mae; });
  spdlog::info("best of {}: {} {}", rows.size(), stnas::to_short_string(best->spec), metrics_line(best->metrics));
  return kExitOk;
}

int run_evaluate_command(const std::string& config_path, const std::string& spec_text, const Flags& flags) {
  stnas::RunConfig cfg = build_config(config_path, flags);
  cfg.backend.kind = stnas::BackendKind::None;
  cfg.validate();
  set_threads(cfg.threads);
  stnas::ArchSpec spec;
  try {
    spec = spec_text.find('{') != std::string::npos
               ? stnas::parse_arch_spec(spec_text)
               : stnas::arch_from_short_string(spec_text);
  } catch (const stnas::ParseError& e) {
    throw stnas::ConfigError(std::string("invalid --spec: ") + e.what());
  }
  const stnas::PreparedData data = stnas::prepare_data(cfg);
  const std::uint64_t seed = stnas::evaluation_seed(cfg.seed, spec, 0);
  const stnas::SpecEvaluation ev = stnas::evaluate_spec(spec, data, cfg.train, seed, true);
  nlohmann::ordered_json j;
  j["layers"] = stnas::to_json(spec);
  j["model_seed"] = seed;
  j["diverged"] = ev.diverged;
  j["epoch_losses"] = ev.epoch_losses;
  j["valid"] = metrics_json(ev.valid);
  if (ev.test) j["test"] = metrics_json(*ev.test);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_replay_command(const std::string& run_dir) {
  const stnas::ReplayReport report = stnas::replay_run(run_dir);
  for (const auto& m : report.mismatches) std::cout << "mismatch: " << m << "\n";
  std::cout << fmt::format("replayed {} rounds, {} prompts checked, {} mismatches\n", report.rounds,
                           report.prompts_checked, report.mismatches.size());
  return report.ok() ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("stnas"));

  CLI::App app{"LLM-guided architecture search for spatio-temporal forecasting models"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

  std::string config_path, out, spec_text, run_dir;

  Flags search_flags;
  auto* search = app.add_subcommand("search", "run the LLM-guided search");
  search->add_option("--config", config_path, "key=value config file; flags override it");
  search->add_option("--out", out, "directory for config.txt, log.jsonl, bank.jsonl, transcript.jsonl");
  add_data_flags(search_flags, search);
  add_search_flags(search_flags, search);

  Flags enum_flags;
  auto* enumerate = app.add_subcommand("enumerate", "train and score all 729 architectures");
  enumerate->add_option("--config", config_path, "key=value config file; flags override it");
  enumerate->add_option("--out", out, "CSV output path (default stdout)");
  add_data_flags(enum_flags, enumerate);

  Flags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "train and score a single architecture");
  evaluate->add_option("--config", config_path, "key=value config file; flags override it");
  evaluate->add_option("--spec", spec_text, "six layers, e.g. STP,TTS,STT,STP,TTS,STT, or a JSON object")
      ->required();
  add_data_flags(eval_flags, evaluate);

  auto* replay = app.add_subcommand("replay", "re-render every prompt of a saved run and compare");
  replay->add_option("run_dir", run_dir, "directory written by search --out")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*search) return run_search_command(config_path, out, search_flags);
    if (*enumerate) return run_enumerate_command(config_path, out, enum_flags);
    if (*evaluate) return run_evaluate_command(config_path, spec_text, eval_flags);
    if (*replay) return run_replay_command(run_dir);
  } catch (const stnas::BackendError& e) {
    spdlog::error("{}", e.what());
    return kExitBackend;
  } catch (const stnas::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const stnas::InputError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const stnas::ParseError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
