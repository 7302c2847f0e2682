#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vtla/episode.hpp"
#include "vtla/rng.hpp"

namespace vtla {

inline constexpr int kVocabXY = 51;
inline constexpr int kVocabRz = 21;
inline constexpr double kBinXY = 0.1;  // mm
inline constexpr double kBinRz = 0.5;  // deg
inline constexpr std::array<int, 3> kVocabSizes = {kVocabXY, kVocabXY, kVocabRz};
inline constexpr int kManifestSchema = 1;

inline constexpr const char* kImStart = "<|im_start|>";
inline constexpr const char* kImEnd = "<|im_end|>";
inline constexpr const char* kVisionStart = "<|vision_start|>";
inline constexpr const char* kVisionEnd = "<|vision_end|>";
inline constexpr const char* kImagePad = "<|image_pad|>";

/// One vocabulary index per axis: x, y, rz.
struct ActionTokens {
  std::array<int, 3> ids{};
  bool operator==(const ActionTokens&) const = default;
};

/// Clamp to the action bounds, round half away from zero to the nearest bin.
ActionTokens tokenize_action(const Action& a);
/// Bin centres. Throws std::out_of_range for an index outside its vocabulary.
Action detokenize_action(const ActionTokens& t);
/// Uniformly random bin-centre action.
Action random_bin_action(RandomStream& rng);

/// "x:-1.2 y:0.4 rz:3.0"
std::string format_action_text(const Action& a);

/// Task text naming the image types, the peg shape and the requested action.
std::string instruction_text(ShapeKind shape);
/// User turn: three image spans in tactile-left, tactile-right, vision order,
/// then the instruction, wrapped in im_start/im_end.
std::string user_turn(ShapeKind shape);
std::string assistant_turn(const std::string& label_text);

enum class Split { kId, kOod };
std::string_view split_name(Split s);
Split split_for(ShapeKind kind);

struct ImageRefs {
  std::string tactile_left;
  std::string tactile_right;
  std::string vision;
  bool operator==(const ImageRefs&) const = default;
};

inline constexpr std::array<const char*, 3> kModalityOrder = {"tactile_left", "tactile_right",
                                                              "vision"};

struct SampleMeta {
  std::string sample_id;
  double peg_size_mm = 0.0;
  double clearance_mm = 0.0;
  ImageRefs images;
  Pose misalignment;
  Randomization randomization;
  std::uint64_t episode_id = 0;
  int attempt = 0;
};

struct InstructionSample {
  std::string sample_id;
  ShapeKind shape = ShapeKind::kSquare;
  double peg_size_mm = 0.0;
  double clearance_mm = 0.0;
  Split split = Split::kId;
  ImageRefs images;
  std::string instruction;
  std::string label_text;
  ActionTokens label;
  Action label_continuous;
  Pose misalignment;
  Randomization randomization;
  std::uint64_t episode_id = 0;
  int attempt = 0;

  std::string chat() const { return instruction + assistant_turn(label_text); }
};

/// Throws std::invalid_argument when the observation lacks tactile contact.
InstructionSample build_sample(const Observation& obs, const Action& label, ShapeKind shape,
                               const SampleMeta& meta);

nlohmann::json to_json(const InstructionSample& s);
InstructionSample sample_from_json(const nlohmann::json& j);

/// JSONL, one sample per line, sorted by sample_id.
void write_manifest(const std::filesystem::path& path, std::vector<InstructionSample> samples);
std::vector<InstructionSample> read_manifest(const std::filesystem::path& path);

struct GenConfig {
  std::vector<std::pair<ShapeKind, int>> counts;
  double clearance_min = 0.6;
  double clearance_max = 2.0;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Copied into meta.json verbatim.
  nlohmann::json run_config = nlohmann::json::object();

  /// "full" (28k over five shapes), "eval" (6k ID + 4k OOD), "desk" (2k ID).
  static GenConfig preset(std::string_view name, std::uint64_t seed);
};

struct EpisodeStats {
  ShapeKind shape;
  std::uint64_t episode_id;
  double clearance_mm;
  int steps;
  Phase phase;
  int samples_kept;
};

struct GenSummary {
  std::size_t samples = 0;
  std::vector<EpisodeStats> episodes;
};

/// Runs exploration episodes and writes manifest.jsonl, images/ and meta.json
/// under `out_dir`. Partial output is removed when generation fails.
GenSummary generate_dataset(const GenConfig& config, const std::filesystem::path& out_dir);

}  // namespace vtla
