#pragma once

// Sensor datasets: CSV ingestion, a seeded synthetic generator, z-score
// normalization and sliding-window train/valid/test splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stnas/tensor.hpp"

namespace stnas {

struct RawDataset {
  Tensor readings;   // steps x N
  Tensor adjacency;  // N x N, non-negative
  std::size_t node_count = 0;
  std::size_t step_count = 0;
  std::string name;
};

// Readings CSV: one row per time step, one column per node, optional header.
// Adjacency CSV: "src,dst,weight" edge list with 0-based ids; absent pairs are 0.
RawDataset load_dataset(const std::filesystem::path& readings_path,
                        const std::filesystem::path& adjacency_path);
// Same formats from in-memory text.
Tensor parse_readings_csv(const std::string& text);
Tensor parse_edge_list_csv(const std::string& text, std::size_t nodes);

// Random geometric graph with Gaussian-kernel weights and readings following
//   x_{t+1} = 0.6 x_t + 0.3 P_f x_t + 5 + 2 sin(2 pi t / 288 + phase_i) + N(0, 1).
// Requires nodes >= 2 and steps >= 10 * (history + horizon).
RawDataset synthesize_dataset(std::uint64_t seed, std::size_t nodes, std::size_t steps,
                              std::size_t history = 12, std::size_t horizon = 12);

struct Normalizer {
  double mean = 0.0;
  double std = 1.0;

  // Population statistics; std falls back to 1 for constant input.
  static Normalizer fit(std::span<const Real> values);
  Real apply(Real x) const { return static_cast<Real>((x - mean) / std); }
  Real invert(Real z) const { return static_cast<Real>(z * std + mean); }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

enum class Split { Train, Valid, Test };
const char* split_name(Split split);

// Stride-1 windows over one contiguous segment of the readings.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(Split split, std::size_t offset, Tensor raw_segment, const Normalizer& norm,
                  std::size_t history, std::size_t horizon);

  Split split() const noexcept { return split_; }
  std::size_t history() const noexcept { return history_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }

  // Absolute time index of the first input step of window i.
  std::size_t first_step(std::size_t i) const { return offset_ + i; }
  // Normalized input S x N x 1 and raw target P x N.
  Tensor input(std::size_t i) const;
  Tensor target(std::size_t i) const;

  // Model-layout batches: inputs [B, S, N, 1], targets [B, N, P].
  Tensor batch_inputs(std::span<const std::size_t> windows) const;
  Tensor batch_targets(std::span<const std::size_t> windows, bool normalized) const;

 private:
  Split split_ = Split::Train;
  std::size_t offset_ = 0;
  std::size_t history_ = 0;
  std::size_t horizon_ = 0;
  std::size_t nodes_ = 0;
  std::size_t count_ = 0;
  Tensor raw_;         // segment steps x N
  Tensor normalized_;  // same, z-scored
};

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
};

struct DatasetSplits {
  WindowedDataset train;
  WindowedDataset valid;
  WindowedDataset test;
  Normalizer normalizer;
};

// Temporal split with llround(train * steps) and llround(valid * steps) steps
// for the first two segments; the normalizer is fit on training readings only.
DatasetSplits window_split(const RawDataset& raw, std::size_t history = 12,
                           std::size_t horizon = 12, const SplitRatios& ratios = {});

}  // namespace stnas
