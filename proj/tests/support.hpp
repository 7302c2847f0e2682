#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "vtla/policy.hpp"

namespace vtla::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vtla-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Pt {
  double x, y;
};

/// Vertices of the regular cross-section, built from closed-form circumradii
/// without touching the library.
inline std::vector<Pt> oracle_vertices(ShapeKind kind, double size) {
  int n = 0;
  double start = std::numbers::pi / 2;  // vertex on +y
  switch (kind) {
    case ShapeKind::kSquare:
      n = 4;
      start = std::numbers::pi / 4;  // axis-aligned edges
      break;
    case ShapeKind::kTriangle: n = 3; break;
    case ShapeKind::kPentagon: n = 5; break;
    case ShapeKind::kHexagon: n = 6; break;
    case ShapeKind::kRound: n = 64; break;
  }
  const double r = kind == ShapeKind::kRound ? size / 2 : size / (2 * std::sin(std::numbers::pi / n));
  std::vector<Pt> v;
  for (int i = 0; i < n; ++i) {
    const double a = start + 2 * std::numbers::pi * i / n;
    v.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return v;
}

inline Pt oracle_pose(Pt p, double x, double y, double rz_deg) {
  const double t = rz_deg * std::numbers::pi / 180.0;
  return {p.x * std::cos(t) - p.y * std::sin(t) + x, p.x * std::sin(t) + p.y * std::cos(t) + y};
}

/// Dense-sampling containment: `per_edge` points along every posed peg edge
/// (endpoints included) tested against the hole. Returns the minimum signed
/// distance over all samples.
inline double oracle_containment_margin(ShapeKind kind, double peg_size, double clearance, double x,
                                        double y, double rz, int per_edge = 1000) {
  const auto hole = oracle_vertices(kind, peg_size + clearance);
  const auto peg = oracle_vertices(kind, peg_size);
  // Inward unit normals and offsets of the hole edges, so each test is a dot product.
  std::vector<double> nx, ny, c;
  for (std::size_t i = 0; i < hole.size(); ++i) {
    const Pt a = hole[i], b = hole[(i + 1) % hole.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    nx.push_back(-(b.y - a.y) / len);
    ny.push_back((b.x - a.x) / len);
    c.push_back(-(nx.back() * a.x + ny.back() * a.y));
  }
  double best = 1e300;
  for (std::size_t i = 0; i < peg.size(); ++i) {
    const Pt a = oracle_pose(peg[i], x, y, rz);
    const Pt b = oracle_pose(peg[(i + 1) % peg.size()], x, y, rz);
    for (int k = 0; k < per_edge; ++k) {
      const double t = static_cast<double>(k) / (per_edge - 1);
      const double px = a.x + t * (b.x - a.x), py = a.y + t * (b.y - a.y);
      for (std::size_t e = 0; e < nx.size(); ++e) best = std::min(best, nx[e] * px + ny[e] * py + c[e]);
    }
  }
  return best;
}

/// Small architecture for gradient checks and fast training tests.
inline Architecture tiny_arch() {
  Architecture a;
  a.image_side = 4;
  a.hidden1 = 3;
  a.hidden2 = 4;
  return a;
}

/// Uniform features in [0, 1) and uniformly drawn labels.
inline std::vector<LabeledExample> synthetic_examples(const Architecture& arch, int n, std::uint64_t seed) {
  RandomStream rng(seed, "synthetic");
  std::vector<LabeledExample> out(static_cast<std::size_t>(n));
  for (auto& e : out) {
    e.features.resize(static_cast<std::size_t>(arch.feature_dim()));
    for (auto& v : e.features) v = rng.uniform(0.0, 1.0);
    e.label = {{static_cast<int>(rng.below(kVocabXY)), static_cast<int>(rng.below(kVocabXY)),
                static_cast<int>(rng.below(kVocabRz))}};
  }
  return out;
}

/// Every parameter, heads included, uniform in [-scale, scale].
inline PolicyModel random_model(const Architecture& arch, std::uint64_t seed, double scale = 0.3) {
  PolicyModel m(arch);
  RandomStream rng(seed, "random_model");
  for (auto& v : m.mutable_params()) v = rng.uniform(-scale, scale);
  m.snap_to_f32();
  return m;
}

/// Worst relative error between `analytic` and central differences of `loss`
/// over random coordinates whose gradient scale exceeds 1e-4.
template <class LossFn>
std::pair<double, int> finite_difference_check(PolicyModel& m, const std::vector<double>& analytic,
                                               LossFn loss, int wanted, std::uint64_t seed,
                                               double eps = 1e-4) {
  RandomStream pick(seed, "fd_coords");
  auto theta = m.mutable_params();
  double worst = 0;
  int checked = 0;
  for (int trial = 0; trial < 20 * wanted && checked < wanted; ++trial) {
    const auto i = static_cast<std::size_t>(pick.below(m.num_params()));
    const double saved = theta[i];
    theta[i] = saved + eps;
    const double up = loss();
    theta[i] = saved - eps;
    const double down = loss();
    theta[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    const double scale = std::max(std::fabs(numeric), std::fabs(analytic[i]));
    if (scale < 1e-4) continue;  // relative error is meaningless near zero
    worst = std::max(worst, std::fabs(numeric - analytic[i]) / scale);
    ++checked;
  }
  return {worst, checked};
}

}  // namespace vtla::testing
