#include "stnas/prompts.hpp"

#include <cmath>

#include "stnas/errors.hpp"

namespace stnas {

namespace {

constexpr const char* kArchitectureFormat =
    "Provide no additional text in response, Format output in JSON as { \"Combination of modules\": "
    "{\"Layer_1\": \"choice for layer_1\", \"Layer_2\": \"choice for layer_2\", \"Layer_3\": "
    "\"choice for layer_3\", \"Layer_4\": \"choice for layer_4\", \"Layer_5\": \"choice for "
    "layer_5\", \"Layer_6\": \"choice for layer_6\"}, \"Explanation\": \"explain your choice\"}";

std::string rounds_sentence(int t, int total) {
  return "You have " + std::to_string(total) + " rounds to try, and this is the " + std::to_string(t) +
         " round.";
}

std::string chosen_sentence(std::span<const CellKind> prefix) {
  return "You have chosen " + std::to_string(prefix.size()) + " layers, they are: " +
         render_layer_list(prefix) + ".";
}

}  // namespace

void StagePlan::validate() const {
  if (total_rounds < 1) throw ConfigError("total rounds must be at least 1");
  if (!(explore_ratio >= 0.0 && explore_ratio <= 1.0)) throw ConfigError("explore ratio must be in [0, 1]");
}

int StagePlan::explore_rounds() const {
  return static_cast<int>(std::floor(explore_ratio * total_rounds + 1e-9));
}

Stage stage_for_round(int t, const StagePlan& plan) {
  plan.validate();
  if (t < 1 || t > plan.total_rounds) {
    throw ContractError("round " + std::to_string(t) + " outside [1, " + std::to_string(plan.total_rounds) + "]");
  }
  return t <= plan.explore_rounds() ? Stage::Explore : Stage::Optimize;
}

const char* thought_mode_name(ThoughtMode mode) { return mode == ThoughtMode::COT ? "cot" : "tot"; }

ThoughtMode thought_mode_from_name(const std::string& name) {
  if (name == "cot" || name == "COT") return ThoughtMode::COT;
  if (name == "tot" || name == "TOT") return ThoughtMode::TOT;
  throw ConfigError("unknown thought mode \"" + name + "\" (expected cot or tot)");
}

std::string render_background(const std::string& history, const std::string& dataset_description) {
  return "Please select appropriate modules for the following deep learning task.\n"
         "Background description:\n"
         "The dataset: " + dataset_description + "\n"
         "The options: The deep learning task should properly capture spatial and temporal "
         "information with a certain combination of several layers, and each layer can choose one "
         "of the three kinds of modules, namely spatial-then-temporal, temporal-then-spatial and "
         "spatial-temporal-parallely.\n"
         "The architecture: The whole deep learning architecture is a directed acyclic graph with "
         "four nodes and six layers, and the preceding nodes are connected to each subsequent nodes "
         "with a layer. e.g. Node 1 connect Nodes 2 with Layer 1, Node 1 connect Nodes 3 with Layer "
         "2, ...\n"
         "The metrics: Three metrics to evaluate the results predicted by the model, including MAE "
         "(Mean Absolute Error), MAPE (Mean Absolute Percentage Error), and RMSE (Root Mean Square "
         "Error)\n"
         "Here are some historical samples obtained in previous rounds to guide you to select more "
         "suitable combination of modules (sorted by MAE): " + history;
}

std::string render_cot(Stage stage, int t, int total) {
  std::string next =
      stage == Stage::Explore
          ? "Next, considering these factors comprehensively, for the six layers, try to design a "
            "new combination that is not existed in historical samples to potentially achieve "
            "better performance and explain your choice. "
          : "Next, considering these factors comprehensively, for the six layers, try to find the "
            "best combination according to previous tried samples to make MSE, MAE and RMSE lower "
            "and explain your choice. ";
  return "Your task:\n"
         "First, analyze the background description of this task.\n"
         "Then, observe the samples from previous rounds, consider the applicability of different "
         "modules in this task.\n" +
         next + rounds_sentence(t, total) + "\n" + kArchitectureFormat;
}

std::string render_tot_generate(std::span<const CellKind> prefix) {
  if (prefix.size() >= kLayerCount) throw ContractError("all six layers are already chosen");
  return chosen_sentence(prefix) +
         "\nYour task:\n"
         "First, analyze the background description of this task.\n"
         "Then, observe the historical samples and the layers you have chosen.\n"
         "Next, considering these factors comprehensively, try to choose the next one layer based "
         "on your current chosen layers, that should not be too similar to the history samples to "
         "potentially achieve better performance, and explain the reason.\n"
         "Provide no additional text in response, Format output in JSON as {\"New layer\": \"Your "
         "choice for new layer\", \"Explanation\": \"explain your choice\"}";
}

std::string render_tot_evaluate(std::span<const CellKind> prefix) {
  if (prefix.size() > kLayerCount) throw ContractError("more than six layers chosen");
  return chosen_sentence(prefix) +
         "\nYour task:\n"
         "First, analyze the background description of this task.\n"
         "Then, observe the historical samples and the layers you have chosen.\n"
         "Next, judge if it is possible that the layers you have chosen will lead into a better "
         "result and explain the reason.\n"
         "Provide no additional text in response, Format output in JSON as {\"Judgment\": "
         "\"possible or impossible\", \"Explanation\": \"explain your judgment\"}";
}

std::string render_layer_list(std::span<const CellKind> prefix) {
  std::string out = "[";
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i) out += ", ";
    out += "\"" + std::string(canonical_name(prefix[i])) + "\"";
  }
  return out + "]";
}

}  // namespace stnas
