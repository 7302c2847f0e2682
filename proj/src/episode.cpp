#include "vtla/episode.hpp"

#include <algorithm>
#include <stdexcept>

#include "vtla/rng.hpp"

namespace vtla {

void TaskConfig::validate() const {
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (!(misalign_range_xy > 0.0) || !(misalign_range_rz > 0.0)) {
    throw std::invalid_argument("misalignment ranges must be positive");
  }
  if (!(clearance_mm > 0.0)) throw std::invalid_argument("clearance must be positive");
  if (!(peg.size_mm > 0.0)) throw std::invalid_argument("peg size must be positive");
}

TaskConfig make_task(ShapeKind kind, double clearance_mm) {
  TaskConfig c;
  c.peg = Shape{kind, default_peg_size(kind)};
  c.clearance_mm = clearance_mm;
  return c;
}

Action clamp_action(const Action& a) {
  return {std::clamp(a.dx, -kActionLimitXY, kActionLimitXY),
          std::clamp(a.dy, -kActionLimitXY, kActionLimitXY),
          std::clamp(a.drz, -kActionLimitRz, kActionLimitRz)};
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kInProgress: return "in_progress";
    case Phase::kSuccess: return "success";
    case Phase::kFailure: return "failure";
  }
  return "unknown";
}

std::string_view step_result_name(StepResult r) {
  switch (r) {
    case StepResult::kInserted: return "inserted";
    case StepResult::kCollided: return "collided";
    case StepResult::kExhausted: return "exhausted";
  }
  return "unknown";
}

EpisodeState reset(const TaskConfig& config, std::uint64_t seed) {
  config.validate();
  EpisodeState s;
  s.config = config;
  s.seed = seed;
  RandomStream rng(seed, "misalignment");
  s.initial.x = rng.uniform(-config.misalign_range_xy, config.misalign_range_xy);
  s.initial.y = rng.uniform(-config.misalign_range_xy, config.misalign_range_xy);
  s.initial.rz = rng.uniform(-config.misalign_range_rz, config.misalign_range_rz);
  s.misalignment = s.initial;
  s.randomization = sample_all(seed);
  return s;
}

Action ground_truth_action(const EpisodeState& state) {
  if (state.phase != Phase::kInProgress) {
    throw std::logic_error("ground truth requested for a terminated episode");
  }
  const Pose& m = state.misalignment;
  return clamp_action({-m.x, -m.y, -m.rz});
}

StepOutcome step(EpisodeState& state, const Action& action) {
  if (state.phase != Phase::kInProgress) throw std::logic_error("step after termination");
  const TaskConfig& cfg = state.config;
  const Action a = clamp_action(action);
  const double guard_xy = cfg.misalign_range_xy + cfg.clearance_mm;
  const double guard_rz = cfg.misalign_range_rz + cfg.clearance_mm;
  Pose& m = state.misalignment;
  m.x = std::clamp(m.x + a.dx, -guard_xy, guard_xy);
  m.y = std::clamp(m.y + a.dy, -guard_xy, guard_xy);
  m.rz = std::clamp(m.rz + a.drz, -guard_rz, guard_rz);
  ++state.attempt;

  const Polygon peg = make_polygon(cfg.peg);
  const Polygon hole = make_polygon(hole_for(cfg.peg, cfg.clearance_mm));
  StepOutcome out;
  if (fits_inside(hole, peg, m)) {
    state.phase = Phase::kSuccess;
    out.result = StepResult::kInserted;
  } else if (state.attempt >= cfg.max_attempts) {
    state.phase = Phase::kFailure;
    out.result = StepResult::kExhausted;
  } else {
    out.result = StepResult::kCollided;
    out.observation = render_observation(m, cfg.peg, cfg.clearance_mm, state.randomization,
                                         static_cast<std::uint64_t>(state.attempt));
  }
  return out;
}

Observation observe(const EpisodeState& state) {
  return render_observation(state.misalignment, state.config.peg, state.config.clearance_mm,
                            state.randomization, static_cast<std::uint64_t>(state.attempt));
}

EpisodeTrace run_episode(const TaskConfig& config, std::uint64_t seed, Policy& policy) {
  EpisodeState state = reset(config, seed);
  EpisodeTrace trace{config, seed, state.initial, {}, Phase::kInProgress};
  Observation obs = observe(state);
  while (state.phase == Phase::kInProgress) {
    const PolicyQuery query{obs, config.peg.kind, ground_truth_action(state)};
    const Action action = policy.act(query);
    TraceStep rec;
    rec.misalignment_before = state.misalignment;
    rec.action = clamp_action(action);
    StepOutcome outcome = step(state, action);
    rec.misalignment_after = state.misalignment;
    rec.result = outcome.result;
    trace.steps.push_back(rec);
    if (outcome.observation) obs = std::move(*outcome.observation);
  }
  trace.phase = state.phase;
  return trace;
}

EpisodeTrace replay_episode(const TaskConfig& config, std::uint64_t seed,
                            const std::vector<Action>& actions) {
  EpisodeState state = reset(config, seed);
  EpisodeTrace trace{config, seed, state.initial, {}, Phase::kInProgress};
  for (const Action& action : actions) {
    if (state.phase != Phase::kInProgress) break;
    TraceStep rec;
    rec.misalignment_before = state.misalignment;
    rec.action = clamp_action(action);
    rec.result = step(state, action).result;
    rec.misalignment_after = state.misalignment;
    trace.steps.push_back(rec);
  }
  trace.phase = state.phase;
  return trace;
}

nlohmann::json to_json(const EpisodeTrace& trace) {
  auto pose = [](const Pose& p) { return nlohmann::json{{"x", p.x}, {"y", p.y}, {"rz", p.rz}}; };
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"misalignment_before", pose(s.misalignment_before)},
                     {"action", {{"x", s.action.dx}, {"y", s.action.dy}, {"rz", s.action.drz}}},
                     {"misalignment_after", pose(s.misalignment_after)},
                     {"result", step_result_name(s.result)}});
  }
  return {{"shape", shape_name(trace.config.peg.kind)},
          {"peg_size_mm", trace.config.peg.size_mm},
          {"clearance_mm", trace.config.clearance_mm},
          {"max_attempts", trace.config.max_attempts},
          {"seed", trace.seed},
          {"initial", pose(trace.initial)},
          {"steps", steps},
          {"phase", phase_name(trace.phase)}};
}

}  // namespace vtla
