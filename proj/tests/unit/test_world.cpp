#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <set>

#include "helpers.hpp"
#include "objnav/error.hpp"
#include "objnav/world.hpp"
#include "oracles.hpp"

using namespace objnav;
using namespace oracle;

namespace {

std::string eight_by_eight(const std::string& label, const std::string& border_row = "########") {
  return R"({"name":"mini","resolution":0.5,"grid":[")" + border_row +
         R"(","#......#","#......#","#......#","#......#","#......#","#......#","########"],
            "objects":[{"id":3,"label":")" + label + R"(","box":[1.0,1.0,1.5,1.5]}]})";
}

// Point stepping at 1 mm; the first sample inside an occupied cell or a foreign box ends the ray.
double sampled_range(const World& w, double ox, double oy, double angle, double max_range) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (double t = 0; t <= max_range; t += 1e-3) {
    const double x = ox + t * dx, y = oy + t * dy;
    const int j = static_cast<int>(std::floor(x / w.resolution()));
    const int i = static_cast<int>(std::floor(y / w.resolution()));
    if (!w.in_grid(i, j) || w.occupied(i, j)) return t;
    for (const auto& o : w.objects()) {
      if (!o.box.contains(ox, oy) && o.box.contains(x, y)) return t;
    }
  }
  return max_range;
}

}  // namespace

TEST_CASE("load_world: minimal file, unknown label, border rule") {
  World w = load_world(eight_by_eight("toilet"));
  CHECK(w.rows() == 8);
  CHECK(w.cols() == 8);
  REQUIRE(w.objects().size() == 1);
  CHECK(w.objects()[0].label == Label::toilet);
  CHECK(w.objects()[0].id == 3);

  CHECK_THROWS_AS(load_world(eight_by_eight("desk")), ParseError);
  try {
    load_world(eight_by_eight("desk"));
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("objects[0]") != std::string::npos);
  }
  CHECK_THROWS_AS(load_world(eight_by_eight("toilet", "###.####")), InvariantError);
}

TEST_CASE("load_world: parse errors carry locations") {
  CHECK_THROWS_AS(load_world("{not json"), ParseError);
  CHECK_THROWS_AS(load_world(R"({"name":"x","resolution":1,"grid":["###","#x#","###"]})"), ParseError);
  try {
    load_world(R"({"name":"x","resolution":1,"grid":["###","#.","###"]})");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("grid[1]") != std::string::npos);
  }
  // Object overlapping a wall cell.
  CHECK_THROWS_AS(load_world(R"({"name":"x","resolution":1,"grid":["####","#..#","####"],
      "objects":[{"id":1,"label":"tv","box":[0.5,1.0,1.5,2.0]}]})"),
                  InvariantError);
  CHECK_THROWS_AS(load_world(R"({"name":"x","resolution":1,"grid":["###","###","###"]})"), InvariantError);
}

TEST_CASE("save_world round-trips") {
  World w = load_world(eight_by_eight("sofa"));
  World back = load_world(save_world(w));
  CHECK(back == w);
  CHECK(save_world(back) == save_world(w));
}

TEST_CASE("generate_world: determinism, distinct seeds, connectivity") {
  GeneratorConfig cfg;
  World a = generate_world(1, cfg);
  World b = generate_world(1, cfg);
  CHECK(a == b);
  CHECK(save_world(a) == save_world(b));

  std::set<uint64_t> hashes;
  for (uint64_t s = 1; s <= 100; ++s) {
    World w = generate_world(s, cfg);
    hashes.insert(w.content_hash());
    std::vector<uint8_t> free(w.grid().size());
    for (size_t k = 0; k < free.size(); ++k) free[k] = w.grid()[k] ? 0 : 1;
    int count = 0;
    connected_components(w.rows(), w.cols(), free, &count);
    CHECK(count == 1);
    CHECK(w.objects().size() >= static_cast<size_t>(cfg.min_objects_per_label * kNumLabels));
  }
  CHECK(hashes.size() == 100);
}

TEST_CASE("generate_world: infeasible config fails") {
  GeneratorConfig cfg;
  cfg.extent_x = 2;
  cfg.extent_y = 2;
  cfg.min_rooms = 10;
  cfg.max_rooms = 10;
  cfg.max_attempts = 5;
  CHECK_THROWS_AS(generate_world(1, cfg), GenerationError);
}

TEST_CASE("is_navigable examples") {
  World w = testutil::room(202, 202, 0.05);  // ~10 m interior
  CHECK(is_navigable(w, 5.05, 5.05, 0.18));
  // Wall face at x = 0.05; 0.1 m from it.
  CHECK_FALSE(is_navigable(w, 0.15, 5.0, 0.18));
  CHECK_FALSE(is_navigable(w, 0.02, 5.0, 0.18));
  CHECK_FALSE(is_navigable(w, -1.0, 5.0, 0.18));
}

TEST_CASE("raycast: perpendicular wall, clamp, monotonicity") {
  World w = testutil::room(20, 20, 0.5);  // interior spans [0.5, 9.5]
  RayHit h = raycast(w, 7.5, 5.0, 0.0, 10.0);
  CHECK(h.kind == HitKind::wall);
  CHECK(h.range == doctest::Approx(2.0).epsilon(1e-12));
  RayHit c = raycast(w, 7.5, 5.0, 0.0, 1.0);
  CHECK(c.kind == HitKind::none);
  CHECK(c.range == 1.0);
  CHECK_THROWS_AS(raycast(w, 0.1, 0.1, 0.0, 1.0), InvariantError);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.6, 9.4), ang(-kPiTest(), kPiTest());
  for (int k = 0; k < 200; ++k) {
    double x = u(rng), y = u(rng), a = ang(rng);
    double full = raycast(w, x, y, a, 20).range;
    double m = std::uniform_real_distribution<double>(0.1, 20)(rng);
    CHECK(raycast(w, x, y, a, m).range <= full + 1e-12);
  }
}

TEST_CASE("raycast matches a 1 mm sampling oracle") {
  // Unit-resolution corridor with an obstacle pattern.
  World w = testutil::ascii({"##########", "#........#", "#..#.....#", "#........#", "#.....#..#", "#........#",
                             "##########"},
                            1.0, {{5, Label::tv, {7.2, 1.2, 7.8, 1.8}}});
  RayHit diag = raycast(w, 1.3, 1.6, kPiTest() / 4, 20);
  CHECK(std::abs(diag.range - sampled_range(w, 1.3, 1.6, kPiTest() / 4, 20)) <= 0.01);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(1.01, 8.99), uy(1.01, 5.99), ang(-3.14159, 3.14159);
  int checked = 0;
  while (checked < 300) {
    double x = ux(rng), y = uy(rng);
    if (w.occupied(static_cast<int>(y), static_cast<int>(x))) continue;
    double a = ang(rng);
    RayHit h = raycast(w, x, y, a, 12);
    CHECK(std::abs(h.range - sampled_range(w, x, y, a, 12)) <= 0.01);
    ++checked;
  }
  RayHit obj = raycast(w, 5.5, 1.5, 0.0, 10);
  CHECK(obj.kind == HitKind::object);
  CHECK(obj.object_id == 5);
  CHECK(obj.range == doctest::Approx(1.7));
}

TEST_CASE("raycast: boxes flush with walls report the object") {
  World w = testutil::room(6, 10, 1.0, {{2, Label::bed, {8.0, 2.0, 9.0, 4.0}}});
  RayHit h = raycast(w, 4.5, 3.0, 0.0, 20);
  CHECK(h.kind == HitKind::object);
  CHECK(h.range == doctest::Approx(3.5));
  World w2 = testutil::room(6, 10, 1.0, {{4, Label::bed, {8.5, 2.0, 9.0, 4.0}}});
  RayHit h2 = raycast(w2, 4.5, 3.0, 0.0, 20);
  CHECK(h2.kind == HitKind::object);
  CHECK(h2.range == doctest::Approx(4.0));
}

TEST_CASE("geodesic_field: axial step and corridor") {
  // 1-cell-wide corridor: robot radius small enough to fit.
  World w = testutil::ascii({"##############", "#............#", "##############"}, 0.1,
                            {{1, Label::tv, {0.1, 0.1, 0.15, 0.2}}});
  GeodesicField f = geodesic_field(w, 1, 0.11, 0.04);
  CHECK(std::isinf(f.at(1, 1)));  // covered by the box
  CHECK(f.at(1, 2) == 0.0);
  CHECK(f.at(1, 3) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(f.at(1, 12) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isinf(f.at(0, 0)));
  CHECK_THROWS_AS(geodesic_field(w, 99, 1.0, 0.04), InvariantError);
}

TEST_CASE("geodesic_field equals an independent shortest-path oracle on 50 random 64x64 worlds") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 50; ++k) {
    World w = random_world64(rng);
    GeodesicField f = geodesic_field(w, 1, 1.0, 0.18);
    std::vector<double> o = oracle_geodesic(w, 1, 1.0, 0.18);
    double worst = 0;
    bool inf_match = true;
    for (size_t i = 0; i < o.size(); ++i) {
      if (std::isinf(o[i]) || std::isinf(f.values()[i])) {
        inf_match = inf_match && std::isinf(o[i]) && std::isinf(f.values()[i]);
      } else {
        worst = std::max(worst, std::abs(o[i] - f.values()[i]));
      }
    }
    CHECK(inf_match);
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("geodesic_field properties: Lipschitz and straight-line bound") {
  GeneratorConfig cfg;
  World w = generate_world(5, cfg);
  const auto& obj = w.objects().front();
  GeodesicField f = geodesic_field(w, obj.id, 1.0, 0.18);
  const double res = w.resolution();
  std::vector<std::pair<int, int>> zeros;
  for (int i = 0; i < f.rows(); ++i)
    for (int j = 0; j < f.cols(); ++j)
      if (f.at(i, j) == 0) zeros.emplace_back(i, j);
  REQUIRE(!zeros.empty());
  for (int i = 1; i + 1 < f.rows(); ++i) {
    for (int j = 1; j + 1 < f.cols(); ++j) {
      const double d = f.at(i, j);
      if (std::isinf(d)) continue;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const double e = f.at(i + di, j + dj);
          if (std::isinf(e)) continue;
          CHECK(std::abs(d - e) <= ((di && dj) ? res * std::sqrt(2.0) : res) + 1e-9);
        }
    }
  }
  // Straight-line lower bound on a subsample.
  for (int i = 1; i < f.rows(); i += 7) {
    for (int j = 1; j < f.cols(); j += 7) {
      const double d = f.at(i, j);
      if (std::isinf(d)) continue;
      double best = 1e18;
      for (auto [a, b] : zeros) best = std::min(best, std::hypot(a - i, b - j) * res);
      CHECK(d >= best - res * std::sqrt(2.0) - 1e-9);
    }
  }
}

TEST_CASE("interpolate: exact on cell centers, skips unreachable neighbours") {
  World w = testutil::room(10, 10, 0.5, {{1, Label::tv, {1.0, 1.0, 1.5, 1.5}}});
  GeodesicField f = geodesic_field(w, 1, 1.0, 0.18);
  for (int i = 1; i < 9; ++i)
    for (int j = 1; j < 9; ++j)
      if (std::isfinite(f.at(i, j))) CHECK(f.interpolate((j + 0.5) * 0.5, (i + 0.5) * 0.5) == doctest::Approx(f.at(i, j)));
  CHECK(std::isfinite(f.interpolate(0.6, 0.6)));
}
