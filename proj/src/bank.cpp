#include "stnas/bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stnas/errors.hpp"

namespace stnas {

const char* stage_name(Stage stage) { return stage == Stage::Explore ? "explore" : "optimize"; }

Stage stage_from_name(const std::string& name) {
  if (name == "explore") return Stage::Explore;
  if (name == "optimize") return Stage::Optimize;
  throw ParseError("unknown stage \"" + name + "\"");
}

namespace {

// Sort key: worse (larger) MAE first, then earlier round first.
bool ranks_before(const EvalRecord& a, const EvalRecord& b) {
  if (a.metrics.mae != b.metrics.mae) return a.metrics.mae > b.metrics.mae;
  return a.round < b.round;
}

std::string format_value(double v) {
  if (std::isinf(v)) return "inf";
  return fmt::format("{:.4f}", v);
}

nlohmann::ordered_json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

double read_metric(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing \"") + key + "\"", line);
  if (it->is_null()) return std::numeric_limits<double>::infinity();
  if (!it->is_number()) throw ParseError(std::string("\"") + key + "\" is not a number", line);
  return it->get<double>();
}

}  // namespace

void MemoryBank::insert(const EvalRecord& record) {
  for (const auto& r : records_) {
    if (r.round == record.round) throw ContractError("round " + std::to_string(record.round) + " already in the bank");
  }
  EvalRecord stored = record;
  // Stored in the form persistence can reproduce: no NaN, no non-finite MAPE.
  if (std::isnan(stored.metrics.mae)) stored.metrics.mae = std::numeric_limits<double>::infinity();
  if (std::isnan(stored.metrics.rmse)) stored.metrics.rmse = std::numeric_limits<double>::infinity();
  if (stored.metrics.mape && !std::isfinite(*stored.metrics.mape)) stored.metrics.mape.reset();
  records_.insert(std::upper_bound(records_.begin(), records_.end(), stored, ranks_before), stored);
}

bool MemoryBank::contains(const ArchSpec& spec) const {
  return std::any_of(records_.begin(), records_.end(), [&](const EvalRecord& r) { return r.spec == spec; });
}

const EvalRecord& MemoryBank::best() const {
  if (records_.empty()) throw EmptyBankError("the memory bank is empty");
  return records_.back();
}

std::string render_record(const EvalRecord& r) {
  const std::string mape = r.metrics.mape ? format_value(*r.metrics.mape) + "%" : "n/a";
  return fmt::format("Round {}: {} -> MAE {}, MAPE {}, RMSE {}", r.round, to_json_text(r.spec),
                     format_value(r.metrics.mae), mape, format_value(r.metrics.rmse));
}

std::string MemoryBank::render_history(HistoryOrder order) const {
  if (records_.empty()) return "(no samples yet)";
  std::string out;
  auto emit = [&](const EvalRecord& r) {
    if (!out.empty()) out += '\n';
    out += render_record(r);
  };
  if (order == HistoryOrder::WorstFirst)
    std::for_each(records_.begin(), records_.end(), emit);
  else
    std::for_each(records_.rbegin(), records_.rend(), emit);
  return out;
}

std::string MemoryBank::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["stage"] = stage_name(r.stage);
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (CellKind k : r.spec.layers) layers.push_back(std::string(canonical_name(k)));
    j["layers"] = std::move(layers);
    j["mae"] = number_or_null(r.metrics.mae);
    j["mape"] = r.metrics.mape ? number_or_null(*r.metrics.mape) : nlohmann::ordered_json(nullptr);
    j["rmse"] = number_or_null(r.metrics.rmse);
    out += j.dump() + "\n";
  }
  return out;
}

MemoryBank MemoryBank::from_jsonl(const std::string& text) {
  MemoryBank bank;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), number);
    }
    if (!j.is_object()) throw ParseError("record is not an object", number);
    EvalRecord r;
    if (!j.contains("round") || !j["round"].is_number_integer()) throw ParseError("missing integer \"round\"", number);
    r.round = j["round"].get<int>();
    if (!j.contains("stage") || !j["stage"].is_string()) throw ParseError("missing \"stage\"", number);
    try {
      r.stage = stage_from_name(j["stage"].get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(e.what(), number);
    }
    if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].size() != kLayerCount) {
      throw ParseError("\"layers\" must list six modules", number);
    }
    for (std::size_t i = 0; i < kLayerCount; ++i) {
      const auto& item = j["layers"][i];
      auto kind = item.is_string() ? cell_kind_from_name(item.get<std::string>()) : std::nullopt;
      if (!kind) throw ParseError("unknown module in layer " + std::to_string(i + 1), number);
      r.spec.layers[i] = *kind;
    }
    r.metrics.mae = read_metric(j, "mae", number);
    r.metrics.rmse = read_metric(j, "rmse", number);
    if (!j.contains("mape")) throw ParseError("missing \"mape\"", number);
    if (!j["mape"].is_null()) r.metrics.mape = read_metric(j, "mape", number);
    try {
      bank.insert(r);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), number);
    }
  }
  return bank;
}

void MemoryBank::persist(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_jsonl();
}

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

}  // namespace stnas
