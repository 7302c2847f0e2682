#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "vtla/dataset.hpp"
#include "vtla/image.hpp"

using namespace vtla;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

SampleMeta meta_for(const std::string& id) {
  SampleMeta m;
  m.sample_id = id;
  m.peg_size_mm = 8.0;
  m.clearance_mm = 1.0;
  m.images = {"images/" + id + "_tl.png", "images/" + id + "_tr.png", "images/" + id + "_v.png"};
  m.misalignment = {1.23, -0.4, 3.0};
  m.randomization = sample_all(77);
  m.episode_id = 9;
  m.attempt = 2;
  return m;
}

Observation contact_observation() {
  return render_observation({1.23, -0.4, 3.0}, {ShapeKind::kPentagon, 8.0}, 1.0, sample_all(77), 2);
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("tokenizer examples") {
    CHECK(tokenize_action({0, 0, 0}).ids == std::array<int, 3>{25, 25, 10});
    CHECK(tokenize_action({-1.23, 0.4, 3.0}) == tokenize_action({-1.2, 0.4, 3.0}));
    CHECK(tokenize_action({-1.2, 0.4, 3.0}).ids == std::array<int, 3>{13, 29, 16});
    CHECK(tokenize_action({-2.6, 0, 5.3}) == tokenize_action({-2.5, 0, 5.0}));
    CHECK(tokenize_action({-2.6, 0, 5.3}).ids == std::array<int, 3>{0, 25, 20});
    const Action top = detokenize_action({{50, 50, 20}});
    CHECK(top.dx == doctest::Approx(2.5));
    CHECK(top.dy == doctest::Approx(2.5));
    CHECK(top.drz == doctest::Approx(5.0));
    const Action mid = detokenize_action({{25, 25, 10}});
    CHECK(mid.dx == 0.0);
    CHECK(mid.dy == 0.0);
    CHECK(mid.drz == 0.0);
  }

  TEST_CASE("half-bin values round away from zero") {
    CHECK(tokenize_action({0.05, -0.05, 0.25}).ids == std::array<int, 3>{26, 24, 11});
    CHECK(tokenize_action({0, 0, -0.25}).ids[2] == 9);
  }

  TEST_CASE("tokenize inverts detokenize for every sequence") {
    int mismatches = 0;
    for (int x = 0; x < kVocabXY; ++x)
      for (int y = 0; y < kVocabXY; ++y)
        for (int r = 0; r < kVocabRz; ++r) {
          const ActionTokens t{{x, y, r}};
          mismatches += !(tokenize_action(detokenize_action(t)) == t);
        }
    CHECK(mismatches == 0);
  }

  TEST_CASE("detokenize rejects out-of-range indices") {
    CHECK_THROWS_AS(detokenize_action({{51, 0, 0}}), std::out_of_range);
    CHECK_THROWS_AS(detokenize_action({{0, -1, 0}}), std::out_of_range);
    CHECK_THROWS_AS(detokenize_action({{0, 0, 21}}), std::out_of_range);
  }

  TEST_CASE("action text format") {
    CHECK(format_action_text({-1.2, 0.4, 3.0}) == "x:-1.2 y:0.4 rz:3.0");
  }

  TEST_CASE("samples carry three image spans before the text") {
    const InstructionSample s =
        build_sample(contact_observation(), {-1.23, 0.4, -3.0}, ShapeKind::kPentagon, meta_for("p0"));
    CHECK(count_of(s.instruction, kVisionStart) == 3);
    CHECK(count_of(s.instruction, kVisionEnd) == 3);
    const auto last_span = s.instruction.rfind(kVisionEnd);
    CHECK(s.instruction.find("pentagon", last_span) != std::string::npos);
    CHECK(s.instruction.rfind(kImStart, 0) == 0);
    CHECK(s.chat().find(s.label_text) != std::string::npos);
    CHECK(s.split == Split::kOod);
    CHECK(s.label == tokenize_action({-1.2, 0.4, -3.0}));
  }

  TEST_CASE("build_sample rejects observations without contact") {
    Observation obs = render_observation({0, 0, 0}, {ShapeKind::kSquare, 10.0}, 2.0, sample_all(1), 0);
    REQUIRE_FALSE(obs.contact);
    CHECK_THROWS_AS(build_sample(obs, {0, 0, 0}, ShapeKind::kSquare, meta_for("s0")),
                    std::invalid_argument);
  }

  TEST_CASE("identical inputs serialize identically") {
    const auto a = build_sample(contact_observation(), {-1.2, 0.4, -3.0}, ShapeKind::kPentagon, meta_for("p0"));
    const auto b = build_sample(contact_observation(), {-1.2, 0.4, -3.0}, ShapeKind::kPentagon, meta_for("p0"));
    CHECK(to_json(a).dump() == to_json(b).dump());
  }

  TEST_CASE("split assignment") {
    CHECK(split_for(ShapeKind::kSquare) == Split::kId);
    CHECK(split_for(ShapeKind::kTriangle) == Split::kId);
    CHECK(split_for(ShapeKind::kHexagon) == Split::kId);
    CHECK(split_for(ShapeKind::kPentagon) == Split::kOod);
    CHECK(split_for(ShapeKind::kRound) == Split::kOod);
  }

  TEST_CASE("presets match the documented sizes") {
    auto total = [](const GenConfig& c, bool ood) {
      int n = 0;
      for (const auto& [k, count] : c.counts) n += ((split_for(k) == Split::kOod) == ood) ? count : 0;
      return n;
    };
    const GenConfig full = GenConfig::preset("full", 0);
    CHECK(total(full, false) + total(full, true) == 28000);
    const GenConfig eval = GenConfig::preset("eval", 0);
    CHECK(total(eval, false) == 6000);
    CHECK(total(eval, true) == 4000);
    const GenConfig desk = GenConfig::preset("desk", 0);
    CHECK(total(desk, false) == 2000);
    CHECK(total(desk, true) == 0);
    CHECK_THROWS_AS(GenConfig::preset("huge", 0), std::invalid_argument);
  }

  TEST_CASE("generation is reproducible and self-consistent") {
    testing::TempDir a("gen-a"), b("gen-b");
    GenConfig cfg;
    cfg.counts = {{ShapeKind::kSquare, 5}, {ShapeKind::kRound, 4}};
    cfg.seed = 11;
    const GenSummary sa = generate_dataset(cfg, a.path());
    const GenSummary sb = generate_dataset(cfg, b.path());
    CHECK(sa.samples == 9);
    CHECK(sb.samples == 9);
    CHECK(slurp(a.path() / "manifest.jsonl") == slurp(b.path() / "manifest.jsonl"));

    const auto samples = read_manifest(a.path() / "manifest.jsonl");
    REQUIRE(samples.size() == 9);
    CHECK(std::is_sorted(samples.begin(), samples.end(),
                         [](const auto& l, const auto& r) { return l.sample_id < r.sample_id; }));
    for (const auto& s : samples) {
      for (const auto* rel : {&s.images.tactile_left, &s.images.tactile_right, &s.images.vision}) {
        REQUIRE(fs::exists(a.path() / *rel));
        CHECK(slurp(a.path() / *rel) == slurp(b.path() / *rel));
      }
      CHECK(s.clearance_mm >= 0.6);
      CHECK(s.clearance_mm <= 2.0);
      CHECK(s.split == split_for(s.shape));
      const Action want = clamp_action({-s.misalignment.x, -s.misalignment.y, -s.misalignment.rz});
      const Action got = detokenize_action(s.label);
      CHECK(std::fabs(got.dx - want.dx) <= kBinXY / 2 + 1e-9);
      CHECK(std::fabs(got.dy - want.dy) <= kBinXY / 2 + 1e-9);
      CHECK(std::fabs(got.drz - want.drz) <= kBinRz / 2 + 1e-9);
    }
    const auto meta = nlohmann::json::parse(slurp(a.path() / "meta.json"));
    CHECK(meta.contains("counts"));
  }

  TEST_CASE("manifest round-trip is field exact") {
    testing::TempDir d("manifest");
    GenConfig cfg;
    cfg.counts = {{ShapeKind::kHexagon, 3}};
    cfg.seed = 5;
    generate_dataset(cfg, d.path());
    const auto first = read_manifest(d.path() / "manifest.jsonl");
    write_manifest(d.path() / "again.jsonl", first);
    const auto second = read_manifest(d.path() / "again.jsonl");
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
      CHECK(to_json(first[i]) == to_json(second[i]));
      CHECK(first[i].label_continuous.dx == second[i].label_continuous.dx);
      CHECK(first[i].randomization.physical.youngs_modulus ==
            second[i].randomization.physical.youngs_modulus);
    }
    CHECK(slurp(d.path() / "manifest.jsonl") == slurp(d.path() / "again.jsonl"));
  }

  TEST_CASE("invalid generation requests leave nothing behind") {
    testing::TempDir d("bad");
    GenConfig cfg;
    cfg.counts = {{ShapeKind::kSquare, 0}};
    CHECK_THROWS_AS(generate_dataset(cfg, d.path() / "out"), std::invalid_argument);
    CHECK_FALSE(fs::exists(d.path() / "out" / "manifest.jsonl"));
    cfg.counts = {{ShapeKind::kSquare, 2}};
    cfg.clearance_min = 2.0;
    cfg.clearance_max = 1.0;
    CHECK_THROWS_AS(generate_dataset(cfg, d.path() / "out"), std::invalid_argument);
  }

  TEST_CASE("manifest reader reports malformed lines") {
    testing::TempDir d("malformed");
    std::ofstream(d.path() / "m.jsonl") << "{not json}\n";
    CHECK_THROWS(read_manifest(d.path() / "m.jsonl"));
    CHECK_THROWS(read_manifest(d.path() / "missing.jsonl"));
  }
}
