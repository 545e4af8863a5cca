#include "stnas/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "stnas/errors.hpp"
#include "stnas/st_ops.hpp"

namespace stnas {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  double v = 0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || cell.empty()) return std::nullopt;
  return v;
}

bool all_numeric(const std::vector<std::string>& cells) {
  for (const auto& c : cells)
    if (!parse_number(c)) return false;
  return true;
}

// Non-blank lines with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> content_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) out.emplace_back(number, line);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Tensor parse_readings_csv(const std::string& text) {
  const auto lines = content_lines(text);
  std::vector<Real> values;
  std::size_t columns = 0, rows = 0;
  for (std::size_t idx = 0; idx < lines.size(); ++idx) {
    const auto& [number, line] = lines[idx];
    const auto cells = split_cells(line);
    if (idx == 0 && !all_numeric(cells)) {
      columns = cells.size();  // header
      continue;
    }
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " cells, found " +
                       std::to_string(cells.size()), number);
    }
    for (const auto& cell : cells) {
      auto v = parse_number(cell);
      if (!v || !std::isfinite(*v)) throw ParseError("non-numeric cell \"" + cell + "\"", number);
      values.push_back(static_cast<Real>(*v));
    }
    ++rows;
  }
  if (rows == 0) throw ParseError("no readings");
  return Tensor({rows, columns}, std::move(values));
}

Tensor parse_edge_list_csv(const std::string& text, std::size_t nodes) {
  Tensor a({nodes, nodes});
  const auto lines = content_lines(text);
  for (std::size_t idx = 0; idx < lines.size(); ++idx) {
    const auto& [number, line] = lines[idx];
    const auto cells = split_cells(line);
    if (idx == 0 && !all_numeric(cells)) continue;  // header
    if (cells.size() != 3) throw ParseError("expected src,dst,weight", number);
    const auto src = parse_number(cells[0]), dst = parse_number(cells[1]), w = parse_number(cells[2]);
    if (!src || !dst || !w) throw ParseError("non-numeric cell in \"" + line + "\"", number);
    for (double id : {*src, *dst}) {
      if (id < 0 || id >= static_cast<double>(nodes) || id != std::floor(id)) {
        throw ParseError("node id " + trim(line.substr(0, line.find(','))) + " out of range for " +
                         std::to_string(nodes) + " nodes", number);
      }
    }
    if (!std::isfinite(*w) || *w < 0) throw ParseError("weight must be finite and non-negative", number);
    a.at(static_cast<std::size_t>(*src), static_cast<std::size_t>(*dst)) = static_cast<Real>(*w);
  }
  return a;
}

RawDataset load_dataset(const std::filesystem::path& readings_path,
                        const std::filesystem::path& adjacency_path) {
  RawDataset d;
  d.readings = parse_readings_csv(read_file(readings_path));
  d.step_count = d.readings.dim(0);
  d.node_count = d.readings.dim(1);
  d.adjacency = parse_edge_list_csv(read_file(adjacency_path), d.node_count);
  d.name = readings_path.stem().string();
  return d;
}

RawDataset synthesize_dataset(std::uint64_t seed, std::size_t nodes, std::size_t steps,
                              std::size_t history, std::size_t horizon) {
  if (nodes < 2) throw InputError("synthetic dataset needs at least 2 nodes");
  if (steps < 10 * (history + horizon)) {
    throw InputError("synthetic dataset needs at least " + std::to_string(10 * (history + horizon)) +
                     " steps, got " + std::to_string(steps));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::array<double, 2>> pos(nodes);
  for (auto& p : pos) p = {unit(rng), unit(rng)};
  constexpr double kRadius = 0.5, kSigma = 0.3;
  Tensor a({nodes, nodes});
  for (std::size_t i = 0; i < nodes; ++i) {
    std::size_t nearest = i;
    double nearest_d2 = 1e300;
    bool linked = false;
    for (std::size_t j = 0; j < nodes; ++j) {
      if (i == j) continue;
      const double dx = pos[i][0] - pos[j][0], dy = pos[i][1] - pos[j][1];
      const double d2 = dx * dx + dy * dy;
      if (d2 < nearest_d2) nearest_d2 = d2, nearest = j;
      if (d2 <= kRadius * kRadius) {
        a.at(i, j) = static_cast<Real>(std::exp(-d2 / (kSigma * kSigma)));
        linked = true;
      }
    }
    if (!linked) {
      a.at(i, nearest) = static_cast<Real>(std::exp(-nearest_d2 / (kSigma * kSigma)));
      a.at(nearest, i) = a.at(i, nearest);
    }
  }
  const Tensor pf = build_adjacency_set(a).forward;

  std::vector<double> phase(nodes);
  for (auto& p : phase) p = 2 * std::numbers::pi * unit(rng);
  Tensor x({steps, nodes});
  std::vector<double> cur(nodes, 50.0), next(nodes);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < nodes; ++i) x.at(t, i) = static_cast<Real>(cur[i]);
    for (std::size_t i = 0; i < nodes; ++i) {
      double diffused = 0;
      for (std::size_t j = 0; j < nodes; ++j) diffused += pf.at(i, j) * cur[j];
      const double season = 2 * std::sin(2 * std::numbers::pi * static_cast<double>(t) / 288.0 + phase[i]);
      next[i] = 0.6 * cur[i] + 0.3 * diffused + 5.0 + season + noise(rng);
    }
    cur.swap(next);
  }
  RawDataset d;
  d.readings = std::move(x);
  d.adjacency = std::move(a);
  d.node_count = nodes;
  d.step_count = steps;
  d.name = "synthetic-" + std::to_string(nodes) + "x" + std::to_string(steps) + "-seed" + std::to_string(seed);
  return d;
}

Normalizer Normalizer::fit(std::span<const Real> values) {
  Normalizer n;
  if (values.empty()) return n;
  double total = 0;
  for (Real v : values) total += v;
  n.mean = total / static_cast<double>(values.size());
  double sq = 0;
  for (Real v : values) sq += (v - n.mean) * (v - n.mean);
  const double var = sq / static_cast<double>(values.size());
  n.std = var > 0 ? std::sqrt(var) : 1.0;
  return n;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "";
}

WindowedDataset::WindowedDataset(Split split, std::size_t offset, Tensor raw_segment,
                                 const Normalizer& norm, std::size_t history, std::size_t horizon)
    : split_(split), offset_(offset), history_(history), horizon_(horizon),
      nodes_(raw_segment.dim(1)), raw_(std::move(raw_segment)) {
  const std::size_t steps = raw_.dim(0);
  count_ = steps >= history + horizon ? steps - history - horizon + 1 : 0;
  normalized_ = Tensor(raw_.shape());
  for (std::size_t i = 0; i < raw_.size(); ++i) normalized_[i] = norm.apply(raw_[i]);
}

Tensor WindowedDataset::input(std::size_t i) const {
  if (i >= count_) throw ContractError("window index out of range");
  Tensor out({history_, nodes_, 1});
  std::copy_n(normalized_.data() + i * nodes_, history_ * nodes_, out.data());
  return out;
}

Tensor WindowedDataset::target(std::size_t i) const {
  if (i >= count_) throw ContractError("window index out of range");
  Tensor out({horizon_, nodes_});
  std::copy_n(raw_.data() + (i + history_) * nodes_, horizon_ * nodes_, out.data());
  return out;
}

Tensor WindowedDataset::batch_inputs(std::span<const std::size_t> windows) const {
  Tensor out({windows.size(), history_, nodes_, 1});
  const std::size_t block = history_ * nodes_;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b] >= count_) throw ContractError("window index out of range");
    std::copy_n(normalized_.data() + windows[b] * nodes_, block, out.data() + b * block);
  }
  return out;
}

Tensor WindowedDataset::batch_targets(std::span<const std::size_t> windows, bool normalized) const {
  const Tensor& src = normalized ? normalized_ : raw_;
  Tensor out({windows.size(), nodes_, horizon_});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b] >= count_) throw ContractError("window index out of range");
    const std::size_t first = windows[b] + history_;
    for (std::size_t p = 0; p < horizon_; ++p)
      for (std::size_t n = 0; n < nodes_; ++n)
        out[(b * nodes_ + n) * horizon_ + p] = src.at(first + p, n);
  }
  return out;
}

DatasetSplits window_split(const RawDataset& raw, std::size_t history, std::size_t horizon,
                           const SplitRatios& ratios) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw InputError("split ratios must be non-negative and sum to 1");
  }
  const std::size_t steps = raw.readings.dim(0), nodes = raw.readings.dim(1);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(steps)));
  const auto n_valid = static_cast<std::size_t>(std::llround(ratios.valid * static_cast<double>(steps)));
  if (n_train + n_valid > steps) throw InputError("split ratios exceed the step count");
  const std::size_t bounds[4] = {0, n_train, n_train + n_valid, steps};

  auto segment = [&](std::size_t s) {
    Tensor out({bounds[s + 1] - bounds[s], nodes});
    std::copy_n(raw.readings.data() + bounds[s] * nodes, out.size(), out.data());
    return out;
  };
  DatasetSplits splits;
  const Tensor train_raw = segment(0);
  splits.normalizer = Normalizer::fit(train_raw.values());
  const Split kinds[3] = {Split::Train, Split::Valid, Split::Test};
  WindowedDataset* targets[3] = {&splits.train, &splits.valid, &splits.test};
  for (std::size_t s = 0; s < 3; ++s) {
    *targets[s] = WindowedDataset(kinds[s], bounds[s], s == 0 ? train_raw : segment(s),
                                  splits.normalizer, history, horizon);
    if (targets[s]->empty()) {
      throw InputError(std::string(split_name(kinds[s])) + " split has " +
                       std::to_string(bounds[s + 1] - bounds[s]) + " steps, fewer than one window of " +
                       std::to_string(history + horizon));
    }
  }
  return splits;
}

}  // namespace stnas
