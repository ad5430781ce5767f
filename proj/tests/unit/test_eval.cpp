#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <regex>

#include "helpers.hpp"
#include "objnav/error.hpp"
#include "objnav/eval.hpp"

using namespace objnav;

namespace {

EpisodeRecord rec(bool s, double o, double l, Label label = Label::bed) {
  EpisodeRecord r;
  r.world = "w";
  r.goal = label;
  r.success = s;
  r.optimal = o;
  r.path_length = l;
  return r;
}

/// Minimal well-formedness check: balanced tags, quoted attributes, one root.
bool well_formed_xml(const std::string& doc) {
  std::vector<std::string> stack;
  int roots = 0;
  size_t i = 0;
  while ((i = doc.find('<', i)) != std::string::npos) {
    const size_t j = doc.find('>', i);
    if (j == std::string::npos) return false;
    std::string tag = doc.substr(i + 1, j - i - 1);
    i = j + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?') continue;
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (stack.empty()) ++roots;
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() && roots == 1;
}

/// Faces and drives at the goal with the beeline controller from the first step.
class BeelinePolicy : public EpisodePolicy {
 public:
  void begin(const EpisodeState&, uint64_t) override {}
  Twist act(const Observation& obs, const EpisodeState& env) override { return beeline_step(obs, env); }
};

std::shared_ptr<const World> corridor() {
  return testutil::share(testutil::room(42, 262, 0.05, {{0, Label::sofa, {12.4, 0.3, 12.9, 1.8}}}, "corridor"));
}

}  // namespace

TEST_CASE("spl examples") {
  CHECK(compute_spl({rec(true, 10, 10)}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(compute_spl({rec(true, 5, 10)}) == doctest::Approx(0.5).epsilon(1e-12));
  const std::vector<EpisodeRecord> two{rec(true, 4, 5), rec(false, 3, 9)};
  CHECK(std::abs(compute_spl(two) - 0.4) <= 1e-9);
  CHECK(std::abs(success_rate(two) - 0.5) <= 1e-9);
  CHECK(compute_spl({rec(false, 2, 1)}) == 0.0);
  // Shorter-than-optimal paths are capped at 1.
  CHECK(compute_spl({rec(true, 5, 3)}) == 1.0);
}

TEST_CASE("spl rejects empty sets and nonpositive optimal lengths") {
  CHECK_THROWS_AS(compute_spl({}), InvariantError);
  CHECK_THROWS_AS(success_rate({}), InvariantError);
  CHECK_THROWS_AS(compute_spl({rec(true, 0, 1)}), InvariantError);
  CHECK_THROWS_AS(success_rate({rec(true, -1, 1)}), InvariantError);
}

TEST_CASE("spl never exceeds sr on fuzzed record sets and ignores order") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> len(0.01, 20.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<EpisodeRecord> rs(1 + rng() % 40);
    for (auto& r : rs) r = rec(rng() & 1, len(rng), len(rng) * (rng() % 4 == 0 ? 0.0 : 1.0));
    const double spl = compute_spl(rs), sr = success_rate(rs);
    CHECK(spl >= 0);
    CHECK(spl <= sr + 1e-12);
    CHECK(sr <= 1);
    std::shuffle(rs.begin(), rs.end(), rng);
    CHECK(std::abs(compute_spl(rs) - spl) <= 1e-12);
  }
}

TEST_CASE("distance buckets") {
  const std::vector<double> edges{0, 5, 10, 15};
  const auto b = bucket_by_distance({rec(true, 5.0, 5.0)}, edges);
  REQUIRE(b.size() == 3);
  CHECK(b[0].n == 0);
  CHECK(b[1].n == 1);
  CHECK(b[2].n == 0);

  std::vector<EpisodeRecord> rs{rec(true, 1, 2), rec(false, 7, 9), rec(true, 12, 13), rec(true, 4.999, 6)};
  int total = 0;
  for (const auto& s : bucket_by_distance(rs, edges)) total += s.n;
  CHECK(total == static_cast<int>(rs.size()));

  const std::vector<EpisodeRecord> low{rec(true, 1, 2), rec(false, 2, 3), rec(true, 3, 3)};
  const auto one = bucket_by_distance(low, edges);
  CHECK(one[0].spl == doctest::Approx(compute_spl(low)));
  CHECK(one[0].sr == doctest::Approx(success_rate(low)));

  const auto j = to_json(one);
  CHECK(j[1]["empty"] == true);

  CHECK_THROWS_AS(bucket_by_distance(rs, {0, 5, 5}), InvariantError);
  CHECK_THROWS_AS(bucket_by_distance(rs, {0, 10, 5}), InvariantError);
}

TEST_CASE("per-object table uses label means") {
  const std::vector<EpisodeRecord> single{rec(true, 4, 5, Label::tv), rec(false, 3, 9, Label::tv)};
  const ObjectTable t1 = per_object_table(single);
  REQUIRE(t1.rows.size() == 1);
  CHECK(t1.rows.at(Label::tv).spl == doctest::Approx(compute_spl(single)));
  CHECK(t1.rows.at(Label::tv).sr == doctest::Approx(success_rate(single)));
  CHECK(t1.rows.at(Label::tv).n == 2);

  // chair SPL 0.4 over 1 record, oven SPL 0.6 over 5 records.
  std::vector<EpisodeRecord> rs{rec(true, 4, 10, Label::chair)};
  for (int k = 0; k < 5; ++k) rs.push_back(rec(true, 6, 10, Label::oven));
  const ObjectTable t = per_object_table(rs);
  CHECK(t.mean_spl == doctest::Approx(0.5));
  CHECK(t.rows.count(Label::bed) == 0);
  const auto j = to_json(t);
  CHECK(j["rows"].contains("chair"));
  CHECK_FALSE(j["rows"].contains("bed"));
}

TEST_CASE("record json round trip") {
  EpisodeRecord r = rec(true, 3.5, 4.25, Label::refrigerator);
  r.goal_id = 3;
  r.seed = 99;
  r.steps = 41;
  r.collisions = 2;
  r.trajectory = {{1, 2, 0.5}, {1.1, 2, 0.5}};
  const EpisodeRecord back = nlohmann::json(r).get<EpisodeRecord>();
  CHECK(back.goal == r.goal);
  CHECK(back.optimal == r.optimal);
  CHECK(back.path_length == r.path_length);
  CHECK(back.trajectory == r.trajectory);
  CHECK(back.collisions == 2);
}

TEST_CASE("standing still fails with zero path length") {
  const auto world = corridor();
  EpisodeConfig cfg;
  cfg.max_steps = 60;
  StandStillPolicy p;
  const EpisodeRecord r = run_episode(p, world, Label::sofa, 5, cfg);
  CHECK_FALSE(r.success);
  CHECK(r.path_length == 0);
  CHECK(r.steps == cfg.max_steps);
  CHECK(r.trajectory.size() == static_cast<size_t>(cfg.max_steps) + 1);
  CHECK(r.optimal > 0);
}

TEST_CASE("beeline in a straight corridor succeeds near the optimal length") {
  const auto world = corridor();
  EpisodeConfig cfg;
  cfg.spawn.d_min = 4.0;
  BeelinePolicy p;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    const EpisodeRecord r = run_episode(p, world, Label::sofa, seed, cfg);
    CHECK(r.success);
    CHECK(std::abs(r.path_length - r.optimal) <= 0.1 * r.optimal);
  }
}

TEST_CASE("same seed reproduces the record") {
  auto world = testutil::share(generate_world(11, GeneratorConfig{}));
  const EpisodeConfig cfg;
  RoombaPolicy a, b;
  const EpisodeRecord r1 = run_episode(a, world, world->objects()[2].label, 77, cfg);
  const EpisodeRecord r2 = run_episode(b, world, world->objects()[2].label, 77, cfg);
  CHECK(nlohmann::json(r1) == nlohmann::json(r2));
}

TEST_CASE("suite order and results do not depend on worker count") {
  std::vector<std::shared_ptr<const World>> worlds;
  for (uint64_t s = 0; s < 3; ++s) worlds.push_back(testutil::share(generate_world(20 + s, GeneratorConfig{}, "g" + std::to_string(s))));
  SuiteConfig cfg;
  cfg.episodes_per_world = 4;
  cfg.episode.max_steps = 120;
  const PolicyFactory f = [] { return std::make_unique<RoombaPolicy>(); };
  const auto r1 = run_suite(f, worlds, cfg);
  cfg.workers = 3;
  const auto r3 = run_suite(f, worlds, cfg);
  REQUIRE(r1.size() == 12);
  CHECK(nlohmann::json(r1) == nlohmann::json(r3));
  // Labels cycle within each world.
  CHECK(r1[0].goal != r1[1].goal);
  CHECK(r1[0].world == "g0");
  CHECK(r1[4].world == "g1");

  const auto j = results_json(r1, cfg, {{"policy", "roomba"}});
  for (const char* k : {"config", "records", "spl", "sr", "buckets", "per_object"}) CHECK(j.contains(k));
  CHECK(j["config"]["policy"] == "roomba");
  CHECK(j["records"].size() == 12);
}

TEST_CASE("trajectory svg") {
  auto world = testutil::share(generate_world(11, GeneratorConfig{}));
  EpisodeRecord empty = rec(false, 1, 0);
  empty.goal_id = world->objects()[0].id;
  const std::string bare = export_trajectory_svg(empty, *world);
  CHECK(well_formed_xml(bare));
  CHECK(bare.find("stroke=\"red\"") != std::string::npos);
  CHECK(bare.find("<line") == std::string::npos);

  EpisodeConfig cfg;
  cfg.max_steps = 200;
  RoombaPolicy p;
  const EpisodeRecord r = run_episode(p, world, world->objects()[0].label, 3, cfg);
  const std::string svg = export_trajectory_svg(r, *world);
  CHECK(well_formed_xml(svg));
  for (const Pose& q : r.trajectory) {
    CHECK(q.x >= 0);
    CHECK(q.y >= 0);
    CHECK(q.x <= world->width());
    CHECK(q.y <= world->height());
  }
  // Every drawn coordinate lies inside the viewBox.
  const std::regex num("(x1|y1|x2|y2|cx|cy)=\"(-?[0-9.]+)\"");
  double maxv = 0, minv = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), num); it != std::sregex_iterator(); ++it) {
    const double v = std::stod((*it)[2]);
    maxv = std::max(maxv, v);
    minv = std::min(minv, v);
  }
  CHECK(minv >= 0);
  CHECK(maxv <= std::max(world->width(), world->height()) * 50.0 + 1e-6);
  CHECK(svg.find("rgb(0,200,0)") != std::string::npos);
  CHECK(svg.find("rgb(0,0,255)") != std::string::npos);
}
