#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtla/policy.hpp"

namespace vtla {

/// Unweighted L1 over (x mm, y mm, rz deg).
double action_l1(const Action& a, const Action& b);

/// One generated action for one sample under one sampling configuration.
struct Candidate {
  std::size_t example_index = 0;
  std::string sample_id;
  int config_index = 0;
  int draw = 0;
  ActionTokens tokens;
  ActionTokens gt;
  double distance = 0.0;
};

/// `per_config` draws for every (sample, configuration); each draw is seeded
/// from (configuration seed, sample_id, draw) so regeneration is stable.
std::vector<Candidate> generate_candidates(const PolicyModel& model,
                                           std::span<const LabeledExample> examples,
                                           std::span<const std::string> sample_ids,
                                           std::span<const SamplingConfig> configs,
                                           int per_config = 1, int workers = 1);

struct PreferencePair {
  std::string sample_id;
  std::size_t example_index = 0;
  ActionTokens chosen;
  ActionTokens rejected;
  ActionTokens gt;
  double d_chosen = 0.0;
  double d_rejected = 0.0;
  std::array<int, 2> gen_configs{};  // configuration index of chosen, rejected
};

struct PairBuild {
  std::vector<PreferencePair> pairs;
  std::size_t dropped_ties = 0;
  std::size_t dropped_identical = 0;
};

/// Per sample, the closest candidate is chosen and the farthest rejected.
/// Equal distances and identical sequences are dropped and counted.
/// Candidates must be grouped by sample (as generate_candidates emits them).
PairBuild build_preference_pairs(std::span<const Candidate> candidates);

nlohmann::json to_json(const PreferencePair& p, std::span<const SamplingConfig> configs);
/// Throws std::runtime_error when d_chosen >= d_rejected.
PreferencePair pair_from_json(const nlohmann::json& j);
void write_preferences(const std::filesystem::path& path, std::span<const PreferencePair> pairs,
                       std::span<const SamplingConfig> configs);
std::vector<PreferencePair> read_preferences(const std::filesystem::path& path);

struct DpoConfig {
  double beta = 0.1;
  double lr = 1e-4;
  int batch = 32;
  int epochs = 3;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  /// Reference-recipe learning rate, batch size and epochs.
  static DpoConfig reference();
  /// Sharper beta so the small policy fits its pairs without drifting.
  static DpoConfig desk();
  nlohmann::json to_json() const;
};

/// A pair with the frozen reference log-probabilities attached.
struct DpoItem {
  FeatureVector features;
  ActionTokens chosen;
  ActionTokens rejected;
  double ref_chosen = 0.0;
  double ref_rejected = 0.0;
};

std::vector<DpoItem> make_dpo_items(const PolicyModel& reference,
                                    std::span<const PreferencePair> pairs,
                                    std::span<const LabeledExample> examples);

/// (log pi(y_c) - log ref(y_c)) - (log pi(y_r) - log ref(y_r))
double dpo_margin(const PolicyModel& policy, const DpoItem& item);
/// -log sigmoid(beta * margin), computed without overflow.
double dpo_loss_from_margin(double margin, double beta);

/// Mean DPO loss over the batch and its exact gradient w.r.t. the policy.
LossAndGrad dpo_loss(const PolicyModel& policy, std::span<const DpoItem> batch, double beta);
double dpo_loss_value(const PolicyModel& policy, std::span<const DpoItem> batch, double beta);

/// Fraction of items whose margin is strictly positive.
double preference_accuracy(const PolicyModel& policy, std::span<const DpoItem> items);

struct DpoCurve {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;      // full-set loss after each epoch
  std::vector<double> epoch_accuracy;  // full-set preference accuracy after each epoch
};

DpoCurve dpo_train(PolicyModel& policy, std::span<const DpoItem> items, const DpoConfig& cfg);

}  // namespace vtla
