#include <cmath>
#include <set>

#include "doctest.h"
#include "vtla/rng.hpp"

using namespace vtla;

TEST_SUITE("rng") {
  TEST_CASE("named streams are reproducible and distinct") {
    RandomStream a(42, "physics"), b(42, "physics"), c(42, "vision");
    for (int i = 0; i < 100; ++i) {
      const auto va = a.next_u64();
      CHECK(va == b.next_u64());
      CHECK(va != c.next_u64());
    }
  }

  TEST_CASE("consuming one stream never perturbs another") {
    RandomStream vision(9, "vision");
    for (int i = 0; i < 1000; ++i) vision.uniform();
    RandomStream p1(9, "physics"), p2(9, "physics");
    for (int i = 0; i < 10; ++i) CHECK(p1.uniform() == p2.uniform());
  }

  TEST_CASE("uniform ranges") {
    RandomStream r(1, "t");
    for (int i = 0; i < 10000; ++i) {
      const double u = r.uniform();
      CHECK((u >= 0.0 && u < 1.0));
      const double v = r.uniform(-2.0, 3.0);
      CHECK((v >= -2.0 && v <= 3.0));
    }
  }

  TEST_CASE("below covers every value and nothing else") {
    RandomStream r(3, "t");
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const auto v = r.below(7);
      CHECK(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
  }

  TEST_CASE("normal moments") {
    RandomStream r(5, "t");
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double z = r.normal();
      s += z;
      s2 += z * z;
    }
    CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
  }

  TEST_CASE("derived seeds differ per index") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(derive_seed(7, i));
    CHECK(seeds.size() == 1000);
  }
}
