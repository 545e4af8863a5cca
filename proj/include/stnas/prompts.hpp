#pragma once

// Two-stage schedule and the prompt templates sent to the policy model.

#include <span>
#include <string>

#include "stnas/bank.hpp"

namespace stnas {

struct StagePlan {
  int total_rounds = 15;
  double explore_ratio = 0.6;

  void validate() const;
  // floor(explore_ratio * total_rounds), robust to binary rounding of the ratio.
  int explore_rounds() const;
};

// Explore for rounds 1..floor(r*T), Optimize afterwards. Throws ContractError
// for t outside [1, T].
Stage stage_for_round(int t, const StagePlan& plan);

enum class ThoughtMode { COT, TOT };
const char* thought_mode_name(ThoughtMode mode);
ThoughtMode thought_mode_from_name(const std::string& name);

inline constexpr const char* kDefaultDatasetDescription =
    "This is a traffic forecasting dataset, consisting of hundreds of sensors monitoring the "
    "traffic indices around the city. The goal is to predict future traffic indices according to "
    "history indices for each sensor.";

// Shared background with `history` placed at the samples slot.
std::string render_background(const std::string& history,
                              const std::string& dataset_description = kDefaultDatasetDescription);

// Whole-architecture instruction for round t of T (1-based t).
std::string render_cot(Stage stage, int t, int total);

// Per-layer instructions. `prefix` is the layers chosen so far; generation
// requires fewer than six (ContractError otherwise).
std::string render_tot_generate(std::span<const CellKind> prefix);
std::string render_tot_evaluate(std::span<const CellKind> prefix);

// JSON list of canonical names, e.g. ["spatial-then-temporal"].
std::string render_layer_list(std::span<const CellKind> prefix);

}  // namespace stnas
