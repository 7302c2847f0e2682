#include "vtla/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vtla/parallel.hpp"

namespace vtla {
namespace {

constexpr std::array<double, 3> kBinWidths = {kBinXY, kBinXY, kBinRz};
constexpr std::array<double, 3> kLimits = {kActionLimitXY, kActionLimitXY, kActionLimitRz};

std::string format_fixed(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v + 0.0);
  std::string s(buf);
  if (s == "-0.0") s = "0.0";
  return s;
}

nlohmann::json pose_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"rz", p.rz}}; }
Pose pose_from(const nlohmann::json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("rz").get<double>()};
}

struct EncodedSample {
  InstructionSample sample;
  std::vector<std::uint8_t> tactile_left, tactile_right, vision;
};

struct EpisodeOutput {
  EpisodeStats stats;
  std::vector<EncodedSample> samples;
};

std::string make_sample_id(ShapeKind shape, std::uint64_t episode, int attempt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%06llu-%02d", std::string(shape_name(shape)).c_str(),
                static_cast<unsigned long long>(episode), attempt);
  return buf;
}

EpisodeOutput run_exploration_episode(const GenConfig& cfg, ShapeKind shape, std::uint64_t episode,
                                      int max_samples) {
  const std::uint64_t seed =
      derive_seed(hash_combine(cfg.seed, static_cast<std::uint64_t>(shape_index(shape))), episode);
  RandomStream task_rng(seed, "dataset_task");
  const double clearance = task_rng.uniform(cfg.clearance_min, cfg.clearance_max);
  const TaskConfig task = make_task(shape, clearance);
  EpisodeState state = reset(task, seed);
  RandomStream explore(seed, "explore");

  EpisodeOutput out;
  out.stats = {shape, episode, clearance, 0, Phase::kInProgress, 0};
  // First attempt at the sampled misalignment, then uniform random corrections.
  Action action{};
  while (state.phase == Phase::kInProgress) {
    StepOutcome outcome = step(state, action);
    if (outcome.observation && static_cast<int>(out.samples.size()) < max_samples) {
      SampleMeta meta;
      meta.sample_id = make_sample_id(shape, episode, state.attempt);
      meta.peg_size_mm = task.peg.size_mm;
      meta.clearance_mm = clearance;
      meta.images = {"images/" + meta.sample_id + ".tactile_left.png",
                     "images/" + meta.sample_id + ".tactile_right.png",
                     "images/" + meta.sample_id + ".vision.png"};
      meta.misalignment = state.misalignment;
      meta.randomization = state.randomization;
      meta.episode_id = episode;
      meta.attempt = state.attempt;
      const Observation& obs = *outcome.observation;
      EncodedSample enc{build_sample(obs, ground_truth_action(state), shape, meta),
                        encode_png(obs.tactile_left.image), encode_png(obs.tactile_right.image),
                        encode_png(obs.vision)};
      out.samples.push_back(std::move(enc));
    }
    if (state.phase == Phase::kInProgress) action = random_bin_action(explore);
  }
  out.stats.steps = state.attempt;
  out.stats.phase = state.phase;
  out.stats.samples_kept = static_cast<int>(out.samples.size());
  return out;
}

}  // namespace

ActionTokens tokenize_action(const Action& a) {
  const std::array<double, 3> v = {a.dx, a.dy, a.drz};
  ActionTokens t;
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(v[i])) throw std::invalid_argument("action component is not finite");
    const double clamped = std::clamp(v[i], -kLimits[i], kLimits[i]);
    const double steps = std::round(clamped / kBinWidths[i]);
    t.ids[i] = static_cast<int>(steps) + kVocabSizes[i] / 2;
  }
  return t;
}

Action detokenize_action(const ActionTokens& t) {
  std::array<double, 3> v{};
  for (int i = 0; i < 3; ++i) {
    if (t.ids[i] < 0 || t.ids[i] >= kVocabSizes[i]) {
      throw std::out_of_range("action token index out of range");
    }
    v[i] = (t.ids[i] - kVocabSizes[i] / 2) * kBinWidths[i];
  }
  return {v[0], v[1], v[2]};
}

Action random_bin_action(RandomStream& rng) {
  ActionTokens t;
  for (int i = 0; i < 3; ++i) t.ids[i] = static_cast<int>(rng.below(kVocabSizes[i]));
  return detokenize_action(t);
}

std::string format_action_text(const Action& a) {
  return "x:" + format_fixed(a.dx, 1) + " y:" + format_fixed(a.dy, 1) +
         " rz:" + format_fixed(a.drz, 1);
}

std::string instruction_text(ShapeKind shape) {
  return "The first image is a 2x2 sequence of tactile frames from the left fingertip sensor, "
         "the second image is a 2x2 sequence of tactile frames from the right fingertip sensor, "
         "and the third image is the wrist camera view. The peg shape is " +
         std::string(shape_name(shape)) +
         ". The last insertion attempt collided with the hole. Output the corrective robot "
         "action as x (mm), y (mm) and rz (deg) in the format x:<v> y:<v> rz:<v>.";
}

std::string user_turn(ShapeKind shape) {
  std::string s = std::string(kImStart) + "user\n";
  for (int i = 0; i < 3; ++i) s += std::string(kVisionStart) + kImagePad + kVisionEnd;
  s += "\n" + instruction_text(shape) + kImEnd + "\n";
  return s;
}

std::string assistant_turn(const std::string& label_text) {
  return std::string(kImStart) + "assistant\n" + label_text + kImEnd + "\n";
}

std::string_view split_name(Split s) { return s == Split::kId ? "ID" : "OOD"; }

Split split_for(ShapeKind kind) { return is_in_distribution(kind) ? Split::kId : Split::kOod; }

InstructionSample build_sample(const Observation& obs, const Action& label, ShapeKind shape,
                               const SampleMeta& meta) {
  if (!obs.contact || obs.tactile_left.image.pixels.empty() ||
      obs.tactile_right.image.pixels.empty() || obs.vision.pixels.empty()) {
    throw std::invalid_argument("observation is missing a modality");
  }
  InstructionSample s;
  s.sample_id = meta.sample_id;
  s.shape = shape;
  s.peg_size_mm = meta.peg_size_mm;
  s.clearance_mm = meta.clearance_mm;
  s.split = split_for(shape);
  s.images = meta.images;
  s.instruction = user_turn(shape);
  s.label_continuous = clamp_action(label);
  s.label = tokenize_action(s.label_continuous);
  s.label_text = format_action_text(detokenize_action(s.label));
  s.misalignment = meta.misalignment;
  s.randomization = meta.randomization;
  s.episode_id = meta.episode_id;
  s.attempt = meta.attempt;
  return s;
}

nlohmann::json to_json(const InstructionSample& s) {
  const auto& a = s.label_continuous;
  return {{"schema", kManifestSchema},
          {"sample_id", s.sample_id},
          {"shape", shape_name(s.shape)},
          {"peg_size_mm", s.peg_size_mm},
          {"clearance_mm", s.clearance_mm},
          {"split", split_name(s.split)},
          {"images",
           {{"tactile_left", s.images.tactile_left},
            {"tactile_right", s.images.tactile_right},
            {"vision", s.images.vision}}},
          {"modality_order", kModalityOrder},
          {"instruction", s.instruction},
          {"label_text", s.label_text},
          {"label_tokens", s.label.ids},
          {"label_continuous", {{"x", a.dx}, {"y", a.dy}, {"rz", a.drz}}},
          {"misalignment", pose_json(s.misalignment)},
          {"randomization", to_json(s.randomization)},
          {"episode_id", s.episode_id},
          {"attempt", s.attempt}};
}

InstructionSample sample_from_json(const nlohmann::json& j) {
  if (j.at("schema").get<int>() != kManifestSchema) {
    throw std::runtime_error("unsupported manifest schema");
  }
  InstructionSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.shape = parse_shape(j.at("shape").get<std::string>());
  s.peg_size_mm = j.at("peg_size_mm").get<double>();
  s.clearance_mm = j.at("clearance_mm").get<double>();
  s.split = j.at("split").get<std::string>() == "ID" ? Split::kId : Split::kOod;
  const auto& im = j.at("images");
  s.images = {im.at("tactile_left").get<std::string>(), im.at("tactile_right").get<std::string>(),
              im.at("vision").get<std::string>()};
  s.instruction = j.at("instruction").get<std::string>();
  s.label_text = j.at("label_text").get<std::string>();
  s.label.ids = j.at("label_tokens").get<std::array<int, 3>>();
  const auto& lc = j.at("label_continuous");
  s.label_continuous = {lc.at("x").get<double>(), lc.at("y").get<double>(),
                        lc.at("rz").get<double>()};
  s.misalignment = pose_from(j.at("misalignment"));
  s.randomization = randomization_from_json(j.at("randomization"));
  s.episode_id = j.at("episode_id").get<std::uint64_t>();
  s.attempt = j.at("attempt").get<int>();
  return s;
}

void write_manifest(const std::filesystem::path& path, std::vector<InstructionSample> samples) {
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest: " + path.string());
  for (const auto& s : samples) f << to_json(s).dump() << '\n';
  if (!f) throw std::runtime_error("manifest write failed: " + path.string());
}

std::vector<InstructionSample> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read manifest: " + path.string());
  std::vector<InstructionSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

GenConfig GenConfig::preset(std::string_view name, std::uint64_t seed) {
  GenConfig c;
  c.seed = seed;
  if (name == "full") {
    for (ShapeKind k : kAllShapes) c.counts.emplace_back(k, 5600);
  } else if (name == "eval") {
    c.counts = {{ShapeKind::kSquare, 2000},
                {ShapeKind::kTriangle, 2000},
                {ShapeKind::kHexagon, 2000},
                {ShapeKind::kPentagon, 2000},
                {ShapeKind::kRound, 2000}};
  } else if (name == "desk") {
    c.counts = {{ShapeKind::kSquare, 667}, {ShapeKind::kTriangle, 667}, {ShapeKind::kHexagon, 666}};
  } else {
    throw std::invalid_argument("unknown dataset preset: " + std::string(name));
  }
  return c;
}

GenSummary generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.counts.empty()) throw std::invalid_argument("no shapes requested");
  for (const auto& [shape, n] : cfg.counts) {
    if (n < 1) throw std::invalid_argument("per-shape counts must be >= 1");
  }
  if (!(cfg.clearance_min > 0.0) || cfg.clearance_max < cfg.clearance_min) {
    throw std::invalid_argument("invalid clearance range");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path images = out_dir / "images";
  const fs::path manifest = out_dir / "manifest.jsonl";
  const fs::path meta = out_dir / "meta.json";
  const bool had_images = fs::exists(images);
  fs::create_directories(images);

  GenSummary summary;
  std::vector<InstructionSample> all;
  try {
    for (const auto& [shape, target] : cfg.counts) {
      int kept = 0;
      std::uint64_t next_episode = 0;
      while (kept < target) {
        const int remaining = target - kept;
        // Never more episodes than could possibly be needed, so none are rendered in vain.
        const int per_episode = make_task(shape, cfg.clearance_max).max_attempts;
        const std::size_t batch = static_cast<std::size_t>(
            std::clamp((remaining + per_episode - 1) / per_episode, 1, 4 * cfg.workers));
        std::vector<EpisodeOutput> outputs(batch);
        const std::uint64_t first = next_episode;
        parallel_for(batch, cfg.workers, [&](std::size_t i) {
          outputs[i] = run_exploration_episode(cfg, shape, first + i, remaining);
        });
        next_episode += batch;
        // Ordered merge: output never depends on the worker count.
        for (auto& out : outputs) {
          if (kept >= target) break;
          const int take = std::min<int>(target - kept, static_cast<int>(out.samples.size()));
          out.stats.samples_kept = take;
          summary.episodes.push_back(out.stats);
          for (int k = 0; k < take; ++k) {
            EncodedSample& e = out.samples[k];
            write_file(out_dir / e.sample.images.tactile_left, e.tactile_left);
            write_file(out_dir / e.sample.images.tactile_right, e.tactile_right);
            write_file(out_dir / e.sample.images.vision, e.vision);
            all.push_back(std::move(e.sample));
          }
          kept += take;
        }
      }
    }
    summary.samples = all.size();
    write_manifest(manifest, std::move(all));

    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [shape, n] : cfg.counts) counts[std::string(shape_name(shape))] = n;
    nlohmann::json episodes = nlohmann::json::array();
    for (const auto& e : summary.episodes) {
      episodes.push_back({{"shape", shape_name(e.shape)},
                          {"episode_id", e.episode_id},
                          {"clearance_mm", e.clearance_mm},
                          {"steps", e.steps},
                          {"phase", phase_name(e.phase)},
                          {"samples_kept", e.samples_kept}});
    }
    const nlohmann::json m{{"schema", kManifestSchema},
                           {"run_config", cfg.run_config},
                           {"seed", cfg.seed},
                           {"clearance_range_mm", {cfg.clearance_min, cfg.clearance_max}},
                           {"counts", counts},
                           {"samples", summary.samples},
                           {"episodes", summary.episodes.size()},
                           {"episode_stats", episodes}};
    std::ofstream f(meta, std::ios::binary | std::ios::trunc);
    f << m.dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write " + meta.string());
  } catch (...) {
    std::error_code ec;
    fs::remove(manifest, ec);
    fs::remove(meta, ec);
    if (!had_images) fs::remove_all(images, ec);
    throw;
  }
  return summary;
}

}  // namespace vtla
