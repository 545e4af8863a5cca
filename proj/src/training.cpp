#include "stnas/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "stnas/errors.hpp"

namespace stnas {

namespace {

constexpr std::size_t kEvalBatch = 64;

void check_shapes(const ModelInstance& model, const WindowedDataset& split) {
  const auto& cfg = model.config;
  if (split.nodes() != cfg.nodes || split.history() != cfg.history || split.horizon() != cfg.horizon ||
      cfg.input_dim != 1) {
    throw ContractError("model config (N=" + std::to_string(cfg.nodes) + ", S=" +
                        std::to_string(cfg.history) + ", P=" + std::to_string(cfg.horizon) +
                        ") does not match the data (N=" + std::to_string(split.nodes()) + ", S=" +
                        std::to_string(split.history()) + ", P=" + std::to_string(split.horizon()) + ")");
  }
}

template <class F>
void for_each_batch(std::size_t count, std::size_t batch, F&& f) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < count; start += batch) {
    idx.resize(std::min(batch, count - start));
    std::iota(idx.begin(), idx.end(), start);
    f(std::span<const std::size_t>(idx));
  }
}

}  // namespace

TrainResult quick_tune(ModelInstance& model, const WindowedDataset& train, const AdjacencySet& adj,
                       const TrainConfig& cfg) {
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  check_shapes(model, train);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  ParamStore::Adam adam = cfg.adam;
  adam.learning_rate = cfg.learning_rate;

  TrainResult result;
  std::size_t steps = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && steps >= cfg.max_steps) break;
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      Tape tape;
      ForwardContext ctx{true, cfg.dropout_active ? model.config.dropout : 0.0, &rng};
      Var pred = forward(tape, model, tape.constant(train.batch_inputs(idx)), adj, ctx);
      Var loss = mean(abs(sub(pred, tape.constant(train.batch_targets(idx, true)))));
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw TrainingDivergence("non-finite training loss in epoch " + std::to_string(epoch),
                                 static_cast<int>(epoch));
      }
      model.params.zero_grad();
      tape.backward(loss);
      model.params.adam_step(adam);
      result.step_losses.push_back(value);
      total += value;
      ++batches;
      ++steps;
    }
    if (batches == 0) break;
    result.epoch_losses.push_back(total / static_cast<double>(batches));
  }
  return result;
}

double dataset_loss(const ModelInstance& model, const WindowedDataset& split, const AdjacencySet& adj) {
  check_shapes(model, split);
  double total = 0;
  std::size_t entries = 0;
  for_each_batch(split.size(), kEvalBatch, [&](std::span<const std::size_t> idx) {
    const Tensor pred = predict_batch(model, split.batch_inputs(idx), adj);
    const Tensor target = split.batch_targets(idx, true);
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - target[i]);
    entries += pred.size();
  });
  return entries ? total / static_cast<double>(entries) : 0.0;
}

Metrics compute_metrics(std::span<const Real> predicted, std::span<const Real> actual,
                        double mape_threshold) {
  if (predicted.size() != actual.size()) {
    throw DimensionError("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(actual.size()) + " targets");
  }
  if (predicted.empty()) throw InputError("metrics need at least one entry");
  double abs_sum = 0, sq_sum = 0, pct_sum = 0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double err = static_cast<double>(predicted[i]) - static_cast<double>(actual[i]);
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (std::abs(actual[i]) > mape_threshold) {
      pct_sum += std::abs(err) / std::abs(static_cast<double>(actual[i]));
      ++pct_count;
    }
  }
  const auto n = static_cast<double>(predicted.size());
  Metrics m;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (pct_count) m.mape = 100.0 * pct_sum / static_cast<double>(pct_count);
  return m;
}

Metrics evaluate(const ModelInstance& model, const WindowedDataset& split, const AdjacencySet& adj,
                 const Normalizer& norm, double mape_threshold) {
  if (split.empty()) throw InputError("cannot evaluate an empty split");
  check_shapes(model, split);
  std::vector<Real> predicted, actual;
  predicted.reserve(split.size() * split.nodes() * split.horizon());
  actual.reserve(predicted.capacity());
  for_each_batch(split.size(), kEvalBatch, [&](std::span<const std::size_t> idx) {
    const Tensor pred = predict_batch(model, split.batch_inputs(idx), adj);
    const Tensor target = split.batch_targets(idx, false);
    for (Real v : pred.values()) predicted.push_back(norm.invert(v));
    actual.insert(actual.end(), target.values().begin(), target.values().end());
  });
  Metrics m = compute_metrics(predicted, actual, mape_threshold);
  m.window_count = split.size();
  return m;
}

}  // namespace stnas
