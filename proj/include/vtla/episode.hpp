#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "vtla/geometry.hpp"
#include "vtla/randomization.hpp"
#include "vtla/sensors.hpp"

namespace vtla {

inline constexpr double kActionLimitXY = 2.5;  // mm
inline constexpr double kActionLimitRz = 5.0;  // deg

struct TaskConfig {
  Shape peg;
  double clearance_mm = 1.0;
  int max_attempts = 15;
  double misalign_range_xy = 2.5;  // mm
  double misalign_range_rz = 5.0;  // deg

  /// Throws std::invalid_argument on a non-positive range, clearance or attempt budget.
  void validate() const;
};

/// Benchmark task for a shape at its nominal peg size.
TaskConfig make_task(ShapeKind kind, double clearance_mm);

/// Corrective motion applied before the next descent.
struct Action {
  double dx = 0.0;   // mm
  double dy = 0.0;   // mm
  double drz = 0.0;  // deg

  bool operator==(const Action&) const = default;
};

Action clamp_action(const Action& a);

enum class Phase { kInProgress, kSuccess, kFailure };
enum class StepResult { kInserted, kCollided, kExhausted };

std::string_view phase_name(Phase p);
std::string_view step_result_name(StepResult r);

struct EpisodeState {
  TaskConfig config;
  std::uint64_t seed = 0;
  Pose initial;
  Pose misalignment;
  int attempt = 0;
  Phase phase = Phase::kInProgress;
  /// Held fixed for the whole episode, grasp offsets included.
  Randomization randomization;
};

struct StepOutcome {
  StepResult result = StepResult::kCollided;
  /// Present iff result == kCollided.
  std::optional<Observation> observation;
};

/// Misalignment drawn uniformly per axis from the configured ranges.
EpisodeState reset(const TaskConfig& config, std::uint64_t seed);

/// Negated misalignment, clamped to the action bounds. Throws std::logic_error
/// once the episode has terminated.
Action ground_truth_action(const EpisodeState& state);

/// Applies `action` (clamped), then descends once. Throws std::logic_error
/// once the episode has terminated.
StepOutcome step(EpisodeState& state, const Action& action);

/// What the sensors report at the current misalignment without advancing the
/// attempt counter; used for the approach view before the first attempt.
Observation observe(const EpisodeState& state);

struct PolicyQuery {
  const Observation& observation;
  ShapeKind shape;
  /// Only available to simulator-side policies.
  std::optional<Action> ground_truth;
};

/// Maps an observation to a corrective action.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(const PolicyQuery& query) = 0;
};

struct TraceStep {
  Pose misalignment_before;
  Action action;
  Pose misalignment_after;
  StepResult result = StepResult::kCollided;
};

struct EpisodeTrace {
  TaskConfig config;
  std::uint64_t seed = 0;
  Pose initial;
  std::vector<TraceStep> steps;
  Phase phase = Phase::kInProgress;

  int steps_used() const { return static_cast<int>(steps.size()); }
  bool success() const { return phase == Phase::kSuccess; }
};

/// Approach view, then act/step until the episode terminates.
EpisodeTrace run_episode(const TaskConfig& config, std::uint64_t seed, Policy& policy);

/// Re-applies a recorded action sequence from reset.
EpisodeTrace replay_episode(const TaskConfig& config, std::uint64_t seed,
                            const std::vector<Action>& actions);

nlohmann::json to_json(const EpisodeTrace& trace);

}  // namespace vtla
