#pragma once

// Quick-tune training loop and forecast metrics.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stnas/arch.hpp"
#include "stnas/data.hpp"

namespace stnas {

struct TrainConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  ParamStore::Adam adam{};  // learning_rate above takes precedence
  std::uint64_t seed = 0;
  bool dropout_active = true;
  std::size_t max_steps = 0;  // 0 = no cap; otherwise stop after this many updates
};

struct TrainResult {
  std::vector<double> epoch_losses;  // mean batch loss per epoch
  std::vector<double> step_losses;   // loss of every update, in order
};

// Adam on the normalized-space MAE over seeded shuffled mini-batches.
// Throws TrainingDivergence (with the 1-based epoch) on a non-finite loss.
TrainResult quick_tune(ModelInstance& model, const WindowedDataset& train, const AdjacencySet& adj,
                       const TrainConfig& cfg);

// Mean normalized-space MAE over every window of `split`, without dropout.
double dataset_loss(const ModelInstance& model, const WindowedDataset& split, const AdjacencySet& adj);

struct Metrics {
  double mae = 0.0;
  std::optional<double> mape;  // percent; empty when no target exceeds the threshold
  double rmse = 0.0;
  std::size_t window_count = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline constexpr double kMapeThreshold = 1e-4;

// MAE, MAPE over |y| > mape_threshold, and RMSE of two equally sized arrays.
Metrics compute_metrics(std::span<const Real> predicted, std::span<const Real> actual,
                        double mape_threshold = kMapeThreshold);

// Denormalized predictions against raw targets over every window of `split`.
Metrics evaluate(const ModelInstance& model, const WindowedDataset& split, const AdjacencySet& adj,
                 const Normalizer& norm, double mape_threshold = kMapeThreshold);

}  // namespace stnas
