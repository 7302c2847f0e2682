#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtla/dataset.hpp"
#include "vtla/episode.hpp"

namespace vtla {

inline constexpr int kNumShapes = 5;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Frozen featurizer and trainable trunk/head sizes.
struct Architecture {
  int image_side = 28;  // each image is mean-pooled to image_side x image_side
  int hidden1 = 16;
  int hidden2 = 32;
  /// Tactile, tactile, vision (true) or vision, tactile, tactile (false).
  bool vision_last = true;

  int feature_dim() const { return 3 * image_side * image_side + kNumShapes; }
  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  bool operator==(const Architecture&) const = default;
};

using FeatureVector = std::vector<double>;

/// Images are quantized to 8 bits first so in-memory observations and PNGs
/// read back from disk featurize identically.
FeatureVector featurize(const RgbImage& tactile_left, const RgbImage& tactile_right,
                        const RgbImage& vision, ShapeKind shape, const Architecture& arch);
FeatureVector featurize(const Observation& obs, ShapeKind shape, const Architecture& arch);

struct LabeledExample {
  FeatureVector features;
  ActionTokens label;
};

/// Loads the three PNGs of every sample (relative to `root`) and featurizes them.
std::vector<LabeledExample> load_examples(const std::vector<InstructionSample>& samples,
                                          const std::filesystem::path& root,
                                          const Architecture& arch, int workers);

/// Per-axis log-probabilities; axis n is conditioned on the tokens of axes < n.
struct LogProbTables {
  std::array<std::vector<double>, 3> axes;
};

/// Two-layer tanh MLP trunk over the frozen features, followed by
/// autoregressive heads: x from the trunk, y from the trunk and the x token,
/// rz from the trunk and both previous tokens.
class PolicyModel {
 public:
  /// All parameters zero: every head is uniform.
  explicit PolicyModel(Architecture arch = {});
  /// Trunk weights Glorot-uniform from `seed`, heads zero, snapped to f32.
  static PolicyModel initialized(const Architecture& arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  std::size_t num_params() const { return theta_.size(); }
  std::span<const double> params() const { return theta_; }
  std::span<double> mutable_params() { return theta_; }
  /// Output bias of one head (0 = x, 1 = y, 2 = rz).
  std::span<double> head_bias(int axis);
  /// Round every parameter to the nearest float, so checkpoints are exact.
  void snap_to_f32();
  std::string params_hash() const;

  LogProbTables forward_logprobs(std::span<const double> features,
                                 const ActionTokens& prefix) const;
  /// log P(tokens | features), summed over the three axes.
  double sequence_logprob(std::span<const double> features, const ActionTokens& tokens) const;
  /// Adds weight * d log P(tokens | features) / d theta into `grad`; returns log P.
  double accumulate_logprob_grad(std::span<const double> features, const ActionTokens& tokens,
                                 double weight, std::span<double> grad) const;
  /// Raw logits for one axis given the previous tokens.
  std::vector<double> logits(std::span<const double> features, int axis,
                             const ActionTokens& prefix) const;

 private:
  struct Layout {
    std::size_t w1, b1, w2, b2, wx, bx, wy, eyx, by, wr, erx, ery, br, total;
  };
  struct Activations {
    std::vector<double> h1, h2;
  };

  Activations trunk(std::span<const double> features) const;
  void head_logits(const Activations& act, int axis, const ActionTokens& prefix,
                   std::vector<double>& out) const;
  static Layout make_layout(const Architecture& arch);

  Architecture arch_;
  Layout layout_;
  std::vector<double> theta_;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean over the batch of -sum_n log P(label_n | label_<n, x); action tokens only.
LossAndGrad ntp_loss(const PolicyModel& model, std::span<const LabeledExample> batch);
double ntp_loss_value(const PolicyModel& model, std::span<const LabeledExample> batch);

/// Thrown when a loss turns non-finite during training.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct SftHyper {
  double lr = 5e-4;
  int batch = 64;
  int epochs = 10;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  /// Learning rate, batch size and epoch count of the reference recipe.
  static SftHyper reference();
  /// Settings that converge on a few thousand samples in seconds.
  static SftHyper desk();
  nlohmann::json to_json() const;
};

struct TrainCurve {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean training loss after each epoch
};

/// Momentum SGD over a seeded shuffle; parameters snapped to f32 after each step.
TrainCurve sft_train(PolicyModel& model, std::span<const LabeledExample> data,
                     const SftHyper& hyper);

/// Index of the first maximum.
int argmax_index(std::span<const double> values);

struct SamplingConfig {
  double temperature = 1.0;
  std::optional<int> top_k;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// The two generation configurations used for preference data.
std::array<SamplingConfig, 2> default_generation_configs();

ActionTokens greedy_tokens(const PolicyModel& model, std::span<const double> features);
ActionTokens sample_tokens(const PolicyModel& model, std::span<const double> features,
                           const SamplingConfig& cfg, RandomStream& rng);
Action sample_action(const PolicyModel& model, std::span<const double> features,
                     const SamplingConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     const nlohmann::json& metadata = nlohmann::json::object());
/// Throws std::runtime_error on a bad magic, version or truncated file.
PolicyModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

class OraclePolicy final : public Policy {
 public:
  /// Throws std::logic_error when the query carries no ground truth.
  Action act(const PolicyQuery& query) override;
};

class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed, "random_policy") {}
  Action act(const PolicyQuery& query) override;

 private:
  RandomStream rng_;
};

class ZeroPolicy final : public Policy {
 public:
  Action act(const PolicyQuery&) override { return {}; }
};

/// Greedy decoding unless a sampling configuration is given.
class ModelPolicy final : public Policy {
 public:
  explicit ModelPolicy(std::shared_ptr<const PolicyModel> model,
                       std::optional<SamplingConfig> sampling = std::nullopt);
  Action act(const PolicyQuery& query) override;

 private:
  std::shared_ptr<const PolicyModel> model_;
  std::optional<SamplingConfig> sampling_;
  std::optional<RandomStream> rng_;
};

}  // namespace vtla
