#include "stnas/search.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stnas/errors.hpp"

namespace stnas {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t round_seed(std::uint64_t run_seed, int round) {
  return splitmix64(splitmix64(run_seed ^ 0x6a09e667f3bcc909ull) ^ static_cast<std::uint64_t>(round));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("invalid value \"" + value + "\" for " + key);
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  if (!value.empty() && value[0] == '-') throw ConfigError("invalid value \"" + value + "\" for " + key);
  return parse_value<std::size_t>(key, value);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean \"" + value + "\" for " + key);
}

nlohmann::ordered_json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

double number_or_inf(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

nlohmann::ordered_json layers_json(const ArchSpec& spec) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (CellKind k : spec.layers) a.push_back(std::string(canonical_name(k)));
  return a;
}

ArchSpec layers_from_json(const nlohmann::json& a, std::size_t line) {
  if (!a.is_array() || a.size() != kLayerCount) throw ParseError("\"layers\" must list six modules", line);
  ArchSpec spec;
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    auto kind = a[i].is_string() ? cell_kind_from_name(a[i].get<std::string>()) : std::nullopt;
    if (!kind) throw ParseError("unknown module in layer " + std::to_string(i + 1), line);
    spec.layers[i] = *kind;
  }
  return spec;
}

void put_metrics(nlohmann::ordered_json& j, const Metrics& m) {
  j["mae"] = number_or_null(m.mae);
  j["mape"] = m.mape ? number_or_null(*m.mape) : nlohmann::ordered_json(nullptr);
  j["rmse"] = number_or_null(m.rmse);
}

Metrics get_metrics(const nlohmann::json& j) {
  Metrics m;
  m.mae = number_or_inf(j.at("mae"));
  if (!j.at("mape").is_null()) m.mape = j.at("mape").get<double>();
  m.rmse = number_or_inf(j.at("rmse"));
  return m;
}

Metrics diverged_metrics() {
  Metrics m;
  m.mae = std::numeric_limits<double>::infinity();
  m.rmse = std::numeric_limits<double>::infinity();
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  plan.validate();
  ModelConfig dims = model;
  if (dims.nodes == 0) dims.nodes = 1;  // filled in from the dataset later
  dims.validate();
  if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("epochs and batch-size must be positive");
  if (!data.synthetic()) {
    if (data.readings.empty() || data.adjacency.empty()) {
      throw ConfigError("no dataset: give --data and --adj, or --synthetic N:steps");
    }
    for (const auto& p : {data.readings, data.adjacency}) {
      if (!std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
    }
  }
  if (backend.kind == BackendKind::Scripted && !std::filesystem::exists(backend.scripted_path)) {
    throw ConfigError("scripted policy not found: " + backend.scripted_path.string());
  }
  if (generation.parse_retries < 0 || generation.novelty_retries < 0 || generation.branch_width < 1 ||
      generation.exchange_budget < 0) {
    throw ConfigError("retry limits must be non-negative and branch-width positive");
  }
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& raw_value) {
  const std::string value = trim(raw_value);
  if (key == "data") {
    cfg.data.readings = value;
  } else if (key == "adj") {
    cfg.data.adjacency = value;
  } else if (key == "synthetic") {
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw ConfigError("synthetic must be N:steps, got \"" + value + "\"");
    cfg.data.synthetic_nodes = parse_count(key, value.substr(0, colon));
    cfg.data.synthetic_steps = parse_count(key, value.substr(colon + 1));
  } else if (key == "rounds") {
    cfg.plan.total_rounds = parse_value<int>(key, value);
  } else if (key == "explore-ratio") {
    cfg.plan.explore_ratio = parse_value<double>(key, value);
  } else if (key == "mode") {
    cfg.mode = thought_mode_from_name(value);
  } else if (key == "llm-url") {
    cfg.backend.remote.base_url = value;
    if (!value.empty()) cfg.backend.kind = BackendKind::Remote;
  } else if (key == "llm-model") {
    cfg.backend.remote.model = value;
  } else if (key == "llm-api-key-env") {
    cfg.backend.remote.api_key_env = value;
  } else if (key == "llm-temperature") {
    cfg.backend.remote.temperature = parse_value<double>(key, value);
  } else if (key == "llm-timeout-ms") {
    cfg.backend.remote.timeout = std::chrono::milliseconds(parse_value<long long>(key, value));
  } else if (key == "llm-retries") {
    cfg.backend.remote.max_retries = parse_value<int>(key, value);
  } else if (key == "scripted") {
    cfg.backend.scripted_path = value;
    if (!value.empty()) cfg.backend.kind = BackendKind::Scripted;
  } else if (key == "seed") {
    cfg.seed = parse_value<std::uint64_t>(key, value);
  } else if (key == "epochs") {
    cfg.train.epochs = parse_count(key, value);
  } else if (key == "batch-size") {
    cfg.train.batch_size = parse_count(key, value);
  } else if (key == "lr") {
    cfg.train.learning_rate = parse_value<double>(key, value);
  } else if (key == "max-steps") {
    cfg.train.max_steps = parse_count(key, value);
  } else if (key == "dropout") {
    cfg.model.dropout = parse_value<double>(key, value);
  } else if (key == "dropout-active") {
    cfg.train.dropout_active = parse_bool(key, value);
  } else if (key == "history-order") {
    if (value == "worst_first")
      cfg.generation.history_order = HistoryOrder::WorstFirst;
    else if (value == "best_first")
      cfg.generation.history_order = HistoryOrder::BestFirst;
    else
      throw ConfigError("history-order must be worst_first or best_first");
  } else if (key == "parse-retries") {
    cfg.generation.parse_retries = parse_value<int>(key, value);
  } else if (key == "novelty-retries") {
    cfg.generation.novelty_retries = parse_value<int>(key, value);
  } else if (key == "branch-width") {
    cfg.generation.branch_width = parse_value<int>(key, value);
  } else if (key == "exchange-budget") {
    cfg.generation.exchange_budget = parse_value<int>(key, value);
  } else if (key == "hidden-size") {
    cfg.model.hidden_size = parse_count(key, value);
  } else if (key == "attn-dim") {
    cfg.model.attn_dim = parse_count(key, value);
  } else if (key == "attn-heads") {
    cfg.model.attn_heads = parse_count(key, value);
  } else if (key == "ffn-dim") {
    cfg.model.ffn_dim = parse_count(key, value);
  } else if (key == "graph-order") {
    cfg.model.graph_order = parse_value<int>(key, value);
  } else if (key == "node-emb-dim") {
    cfg.model.node_emb_dim = parse_count(key, value);
  } else if (key == "history") {
    cfg.model.history = parse_count(key, value);
  } else if (key == "horizon") {
    cfg.model.horizon = parse_count(key, value);
  } else if (key == "out") {
    cfg.output_dir = value;
  } else if (key == "threads") {
    cfg.threads = parse_value<int>(key, value);
  } else {
    throw ConfigError("unknown setting \"" + key + "\"");
  }
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key=value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  RunConfig cfg;
  apply_config_text(cfg, read_text(path));
  return cfg;
}

std::string to_config_text(const RunConfig& c) {
  std::string out;
  auto put = [&](const std::string& key, const auto& value) { out += fmt::format("{}={}\n", key, value); };
  if (c.data.synthetic()) {
    put("synthetic", fmt::format("{}:{}", c.data.synthetic_nodes, c.data.synthetic_steps));
  } else {
    put("data", c.data.readings.string());
    put("adj", c.data.adjacency.string());
  }
  put("rounds", c.plan.total_rounds);
  put("explore-ratio", c.plan.explore_ratio);
  put("mode", thought_mode_name(c.mode));
  if (c.backend.kind == BackendKind::Scripted) put("scripted", c.backend.scripted_path.string());
  if (c.backend.kind == BackendKind::Remote) {
    put("llm-url", c.backend.remote.base_url);
    put("llm-model", c.backend.remote.model);
    put("llm-api-key-env", c.backend.remote.api_key_env);
    put("llm-temperature", c.backend.remote.temperature);
    put("llm-timeout-ms", c.backend.remote.timeout.count());
    put("llm-retries", c.backend.remote.max_retries);
  }
  put("seed", c.seed);
  put("epochs", c.train.epochs);
  put("batch-size", c.train.batch_size);
  put("lr", c.train.learning_rate);
  put("max-steps", c.train.max_steps);
  put("dropout", c.model.dropout);
  put("dropout-active", c.train.dropout_active ? "true" : "false");
  put("history-order", c.generation.history_order == HistoryOrder::WorstFirst ? "worst_first" : "best_first");
  put("parse-retries", c.generation.parse_retries);
  put("novelty-retries", c.generation.novelty_retries);
  put("branch-width", c.generation.branch_width);
  put("exchange-budget", c.generation.exchange_budget);
  put("hidden-size", c.model.hidden_size);
  put("attn-dim", c.model.attn_dim);
  put("attn-heads", c.model.attn_heads);
  put("ffn-dim", c.model.ffn_dim);
  put("graph-order", c.model.graph_order);
  put("node-emb-dim", c.model.node_emb_dim);
  put("history", c.model.history);
  put("horizon", c.model.horizon);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  d.raw = cfg.data.synthetic()
              ? synthesize_dataset(cfg.seed, cfg.data.synthetic_nodes, cfg.data.synthetic_steps,
                                   cfg.model.history, cfg.model.horizon)
              : load_dataset(cfg.data.readings, cfg.data.adjacency);
  d.splits = window_split(d.raw, cfg.model.history, cfg.model.horizon);
  d.adjacency = build_adjacency_set(d.raw.adjacency);
  d.model = cfg.model;
  d.model.nodes = d.raw.node_count;
  d.model.validate();
  return d;
}

std::uint64_t evaluation_seed(std::uint64_t run_seed, const ArchSpec& spec, std::size_t occurrence) {
  return splitmix64(splitmix64(splitmix64(run_seed) ^ spec_index(spec)) ^ occurrence);
}

SpecEvaluation evaluate_spec(const ArchSpec& spec, const PreparedData& data, const TrainConfig& train,
                             std::uint64_t seed, bool with_test) {
  SpecEvaluation out;
  out.model = init_model(spec, data.model, seed);
  ModelInstance& model = out.model;
  TrainConfig tc = train;
  tc.seed = splitmix64(seed ^ 0x5851f42d4c957f2dull);
  try {
    out.epoch_losses = quick_tune(model, data.splits.train, data.adjacency, tc).epoch_losses;
  } catch (const TrainingDivergence& e) {
    spdlog::warn("{} diverged: {}", to_short_string(spec), e.what());
    out.diverged = true;
    out.valid = diverged_metrics();
    out.valid.window_count = data.splits.valid.size();
    if (with_test) out.test = diverged_metrics();
    return out;
  }
  out.valid = evaluate(model, data.splits.valid, data.adjacency, data.splits.normalizer);
  if (with_test) out.test = evaluate(model, data.splits.test, data.adjacency, data.splits.normalizer);
  return out;
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

std::string RunLog::to_jsonl() const {
  std::string out;
  for (const auto& e : rounds) {
    nlohmann::ordered_json j;
    j["round"] = e.round;
    j["stage"] = stage_name(e.stage);
    j["layers"] = layers_json(e.spec);
    put_metrics(j, e.metrics);
    if (e.test_metrics) {
      nlohmann::ordered_json t;
      put_metrics(t, *e.test_metrics);
      j["test"] = t;
    }
    j["llm_call_count"] = e.llm_call_count;
    j["fallback"] = e.fallback;
    j["diverged"] = e.diverged;
    j["model_seed"] = e.model_seed;
    j["transcript_digest"] = fmt::format("{:016x}", e.transcript_digest);
    j["wall_time_ms"] = e.wall_time_ms;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json f;
  f["final"] = true;
  f["best"] = layers_json(best);
  put_metrics(f, best_metrics);
  if (best_test_metrics) {
    nlohmann::ordered_json t;
    put_metrics(t, *best_test_metrics);
    f["test"] = t;
  }
  f["normalizer"] = {{"mean", normalizer.mean}, {"std", normalizer.std}};
  f["wall_time_ms"] = wall_time_ms;
  out += f.dump() + "\n";
  return out;
}

RunLog RunLog::from_jsonl(const std::string& text) {
  RunLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.value("final", false)) {
        log.best = layers_from_json(j.at("best"), number);
        log.best_metrics = get_metrics(j);
        if (j.contains("test")) log.best_test_metrics = get_metrics(j.at("test"));
        log.normalizer.mean = j.at("normalizer").at("mean").get<double>();
        log.normalizer.std = j.at("normalizer").at("std").get<double>();
        log.wall_time_ms = j.value("wall_time_ms", 0.0);
        continue;
      }
      RoundEntry e;
      e.round = j.at("round").get<int>();
      e.stage = stage_from_name(j.at("stage").get<std::string>());
      e.spec = layers_from_json(j.at("layers"), number);
      e.metrics = get_metrics(j);
      if (j.contains("test")) e.test_metrics = get_metrics(j.at("test"));
      e.llm_call_count = j.at("llm_call_count").get<std::size_t>();
      e.fallback = j.value("fallback", false);
      e.diverged = j.value("diverged", false);
      e.model_seed = j.at("model_seed").get<std::uint64_t>();
      e.transcript_digest = std::stoull(j.at("transcript_digest").get<std::string>(), nullptr, 16);
      e.wall_time_ms = j.value("wall_time_ms", 0.0);
      log.rounds.push_back(e);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed log entry: ") + ex.what(), number);
    }
  }
  return log;
}

std::string transcripts_to_jsonl(const std::vector<std::vector<Exchange>>& transcripts) {
  std::string out;
  for (std::size_t r = 0; r < transcripts.size(); ++r) {
    for (std::size_t i = 0; i < transcripts[r].size(); ++i) {
      const auto& e = transcripts[r][i];
      nlohmann::ordered_json j;
      j["round"] = r + 1;
      j["index"] = i;
      j["kind"] = exchange_kind_name(e.kind);
      j["system"] = e.system;
      j["user"] = e.user;
      j["response"] = e.response;
      out += j.dump() + "\n";
    }
  }
  return out;
}

std::vector<std::vector<Exchange>> transcripts_from_jsonl(const std::string& text) {
  std::vector<std::vector<Exchange>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto round = j.at("round").get<std::size_t>();
      if (round == 0) throw ParseError("round must be at least 1", number);
      if (out.size() < round) out.resize(round);
      out[round - 1].push_back({exchange_kind_from_name(j.at("kind").get<std::string>()),
                                j.at("system").get<std::string>(), j.at("user").get<std::string>(),
                                j.at("response").get<std::string>()});
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed transcript entry: ") + ex.what(), number);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

std::unique_ptr<PolicyBackend> make_backend(const RunConfig& cfg) {
  switch (cfg.backend.kind) {
    case BackendKind::Scripted:
      return std::make_unique<ScriptedBackend>(load_scripted_policy(cfg.backend.scripted_path),
                                               splitmix64(cfg.seed ^ 0xbb67ae8584caa73bull));
    case BackendKind::Remote:
      return std::make_unique<RemoteBackend>(cfg.backend.remote);
    case BackendKind::None:
      break;
  }
  throw ConfigError("no policy backend: give --scripted <file> or --llm-url <url>");
}

SearchResult run_search(const RunConfig& cfg, PolicyBackend& backend, const PreparedData& data) {
  cfg.plan.validate();
  using Clock = std::chrono::steady_clock;
  const auto run_start = Clock::now();
  SearchResult result;
  result.log.normalizer = data.splits.normalizer;
  std::map<std::size_t, std::size_t> occurrences;
  std::vector<SpecEvaluation> evaluations;
  const int total = cfg.plan.total_rounds;

  for (int t = 1; t <= total; ++t) {
    const auto round_start = Clock::now();
    const Stage stage = stage_for_round(t, cfg.plan);
    GenerationConfig gcfg = cfg.generation;
    gcfg.seed = round_seed(cfg.seed, t);
    GenerationResult gen = generate(cfg.mode, backend, stage, result.bank, t, total, gcfg);

    const std::size_t occurrence = occurrences[spec_index(gen.spec)]++;
    const std::uint64_t seed = evaluation_seed(cfg.seed, gen.spec, occurrence);
    SpecEvaluation ev = evaluate_spec(gen.spec, data, cfg.train, seed, false);
    result.bank.insert(EvalRecord{t, gen.spec, ev.valid, stage});

    RoundEntry e;
    e.round = t;
    e.stage = stage;
    e.spec = gen.spec;
    e.metrics = ev.valid;
    e.llm_call_count = gen.transcript.size();
    e.fallback = gen.fallback;
    e.diverged = ev.diverged;
    e.model_seed = seed;
    e.transcript_digest = transcript_digest(gen.transcript);
    e.wall_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - round_start).count();
    spdlog::info("round {}/{} [{}] {} -> MAE {:.4f} ({} calls, {:.0f} ms)", t, total, stage_name(stage),
                 to_short_string(gen.spec), ev.valid.mae, e.llm_call_count, e.wall_time_ms);
    result.log.rounds.push_back(e);
    result.transcripts.push_back(std::move(gen.transcript));
    evaluations.push_back(std::move(ev));
  }

  const EvalRecord& best = result.bank.best();
  result.best = best.spec;
  result.metrics = best.metrics;
  result.log.best = best.spec;
  result.log.best_metrics = best.metrics;
  const SpecEvaluation& winner = evaluations[static_cast<std::size_t>(best.round - 1)];
  result.log.best_test_metrics = winner.diverged ? diverged_metrics()
                                                 : evaluate(winner.model, data.splits.test, data.adjacency,
                                                            data.splits.normalizer);
  result.log.wall_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - run_start).count();

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.txt", to_config_text(cfg));
    write_text(cfg.output_dir / "log.jsonl", result.log.to_jsonl());
    result.bank.persist(cfg.output_dir / "bank.jsonl");
    write_text(cfg.output_dir / "transcript.jsonl", transcripts_to_jsonl(result.transcripts));
  }
  return result;
}

SearchResult run_search(const RunConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  auto backend = make_backend(cfg);
  return run_search(cfg, *backend, data);
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

namespace {

struct ReplayExhausted {};

class ReplayBackend : public PolicyBackend {
 public:
  ReplayBackend(const std::vector<Exchange>& recorded, int round, ReplayReport& report)
      : recorded_(recorded), round_(round), report_(report) {}

  std::string chat(const ChatRequest& req) override {
    const std::string where = fmt::format("round {} exchange {}", round_, next_ + 1);
    if (next_ >= recorded_.size()) {
      report_.mismatches.push_back(where + ": more requests than recorded exchanges");
      throw ReplayExhausted{};
    }
    const Exchange& e = recorded_[next_++];
    ++report_.prompts_checked;
    if (e.kind != req.kind) report_.mismatches.push_back(where + ": exchange kind differs");
    if (e.system != req.system) report_.mismatches.push_back(where + ": system prompt differs");
    if (e.user != req.user) report_.mismatches.push_back(where + ": user prompt differs");
    return e.response;
  }

  std::size_t unused() const { return recorded_.size() - next_; }

 private:
  const std::vector<Exchange>& recorded_;
  int round_;
  ReplayReport& report_;
  std::size_t next_ = 0;
};

}  // namespace

ReplayReport replay_run(const std::filesystem::path& run_dir) {
  const RunConfig cfg = load_run_config(run_dir / "config.txt");
  const RunLog log = RunLog::from_jsonl(read_text(run_dir / "log.jsonl"));
  const auto transcripts = transcripts_from_jsonl(read_text(run_dir / "transcript.jsonl"));
  ReplayReport report;
  MemoryBank bank;
  const std::vector<Exchange> none;
  for (const RoundEntry& entry : log.rounds) {
    const int t = entry.round;
    ++report.rounds;
    const auto& recorded = static_cast<std::size_t>(t) <= transcripts.size() ? transcripts[t - 1] : none;
    const Stage stage = stage_for_round(t, cfg.plan);
    if (stage != entry.stage) report.mismatches.push_back(fmt::format("round {}: stage differs", t));
    GenerationConfig gcfg = cfg.generation;
    gcfg.seed = round_seed(cfg.seed, t);
    ReplayBackend backend(recorded, t, report);
    try {
      GenerationResult gen = generate(cfg.mode, backend, stage, bank, t, cfg.plan.total_rounds, gcfg);
      if (gen.spec != entry.spec) report.mismatches.push_back(fmt::format("round {}: architecture differs", t));
      if (backend.unused() > 0) {
        report.mismatches.push_back(fmt::format("round {}: {} recorded exchanges not requested", t, backend.unused()));
      }
    } catch (const ReplayExhausted&) {
    }
    bank.insert(EvalRecord{t, entry.spec, entry.metrics, entry.stage});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep(const PreparedData& data, const TrainConfig& train, std::uint64_t seed,
                            const std::vector<ArchSpec>& specs, int threads) {
  std::vector<SweepRow> rows(specs.size());
  std::atomic<std::size_t> done{0};
  std::string error;
  const auto count = static_cast<std::ptrdiff_t>(specs.size());
#ifdef _OPENMP
  const int workers = threads > 0 ? threads : omp_get_max_threads();
#else
  (void)threads;
#endif
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto& spec = specs[static_cast<std::size_t>(i)];
    try {
      rows[static_cast<std::size_t>(i)] = {spec, evaluate_spec(spec, data, train, evaluation_seed(seed, spec, 0), false).valid};
    } catch (const std::exception& e) {
#pragma omp critical(stnas_sweep_error)
      if (error.empty()) error = to_short_string(spec) + ": " + e.what();
    }
    const std::size_t n = ++done;
    if (n % 10 == 0 || n == specs.size()) spdlog::info("sweep {}/{}", n, specs.size());
  }
  if (!error.empty()) throw std::runtime_error("sweep failed at " + error);
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "layer1,layer2,layer3,layer4,layer5,layer6,mae,mape,rmse\n";
  auto num = [](double v) { return std::isfinite(v) ? fmt::format("{}", v) : std::string("inf"); };
  for (const auto& r : rows) {
    for (CellKind k : r.spec.layers) out += std::string(canonical_name(k)) + ",";
    out += num(r.metrics.mae) + "," + (r.metrics.mape ? num(*r.metrics.mape) : std::string("nan")) + "," +
           num(r.metrics.rmse) + "\n";
  }
  return out;
}

}  // namespace stnas
