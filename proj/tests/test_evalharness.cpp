#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "iplan/evalharness.hpp"
#include "test_support.hpp"

using namespace iplan;

namespace {

PolicyConfig small_policy() {
  PolicyConfig c;
  c.rays = 16;
  c.conv1_channels = 3;
  c.conv2_channels = 3;
  c.embedding = 6;
  c.goal_embedding = 4;
  c.hidden1 = 8;
  c.hidden2 = 6;
  return c;
}

// Ignores its inputs: key points step `spacing` straight ahead, and the fear
// logit is fixed.
PolicyParams scripted(double spacing, double fear_logit) {
  PolicyParams p = init_policy(1, small_policy());
  for (auto& b : p.blocks) {
    if (b.name == "head.keypoints.b")
      for (std::size_t j = 0; j < b.values.size(); j += 2) b.values[j] = spacing;
    if (b.name == "head.fear.b") b.values = {fear_logit};
  }
  return p;
}

PolicyParams randomised(std::uint64_t seed) {
  PolicyParams p = init_policy(seed, small_policy());
  Rng rng(seed);
  for (auto& b : p.blocks)
    for (auto& v : b.values) v = rng.uniform(-0.4, 0.4);
  for (auto& b : p.blocks)
    if (b.name == "head.fear.b") b.values = {-3.0};
  return p;
}

Episode made(Outcome o, double p, std::optional<double> l) {
  Episode e;
  e.outcome = o;
  e.executed_length = p;
  e.oracle_length = l;
  return e;
}

// 10 m x 10 m of free space inside the boundary ring.
const WorldModel& open_world() {
  static const WorldModel w = testing::open_world(100, 100, 0.1);
  return w;
}

const WorldModel& maze() {
  static const WorldModel w = generate_world(WorldFamily::rooms, 7, WorldGenConfig{});
  return w;
}

std::string csv_of(const BenchmarkReport& r) {
  std::ostringstream out;
  write_report_csv(r, out);
  return out.str();
}

}  // namespace

TEST_CASE("SPL direct formula examples") {
  const std::vector<Episode> one{made(Outcome::success, 3.0, 3.0)};
  CHECK(spl(one) == 1.0);
  const std::vector<Episode> half{made(Outcome::success, 6.0, 3.0)};
  CHECK(spl(half) == 0.5);
  const std::vector<Episode> mixed{made(Outcome::success, 3.0, 3.0), made(Outcome::collision, 1.0, 3.0),
                                   made(Outcome::success, 4.0, 3.0)};
  CHECK(spl(mixed) == doctest::Approx((1.0 + 0.0 + 0.75) / 3.0).epsilon(1e-15));
  // Shorter than the oracle counts as 1, not more.
  const std::vector<Episode> cut{made(Outcome::success, 2.9, 3.0)};
  CHECK(spl(cut) == 1.0);
}

TEST_CASE("SPL rejects empty input and missing oracle lengths") {
  CHECK_THROWS_AS(spl(std::vector<Episode>{}), std::invalid_argument);
  const std::vector<Episode> missing{made(Outcome::success, 1.0, 1.0), made(Outcome::timeout, 1.0, std::nullopt)};
  CHECK_THROWS_AS(spl(missing), std::invalid_argument);
}

TEST_CASE("SPL is bounded and order invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Episode> eps;
    const std::size_t n = 1 + rng.index(30);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = rng.uniform(0.0, 6.0);
      eps.push_back(made(rng.uniform() < 0.6 ? Outcome::success : Outcome::feared_stop, rng.uniform(0.0, 12.0), l));
    }
    const double v = spl(eps);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    std::reverse(eps.begin(), eps.end());
    CHECK(spl(eps) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("rollout reaches a goal straight ahead") {
  const RobotState start{{2.0, 5.0, 0.0}, 0.0, 0.2};
  const auto ep = rollout(scripted(0.4, -5.0), open_world(), "open", start, {5.0, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(ep.outcome == Outcome::success);
  REQUIRE(ep.oracle_length);
  CHECK(distance(ep.path.back(), ep.goal) <= 0.3);
  // Each step walks the lookahead, so 2.7 m takes six plans.
  CHECK(ep.steps == 6);
  CHECK(ep.latency_ms.size() == ep.steps);
  CHECK(ep.executed_length >= distance(start.position, ep.goal) - 0.3 - 1e-9);
  CHECK(ep.executed_length == doctest::Approx(2.7).epsilon(1e-9));

  // A goal 0.2 m ahead is already inside the radius.
  const auto near = rollout(scripted(0.4, -5.0), open_world(), "open", start, {2.2, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(near.outcome == Outcome::success);
  CHECK(near.steps == 0);
  CHECK(spl(std::vector<Episode>{near}) == 1.0);
}

TEST_CASE("rollout reports collision only on ground-truth contact") {
  const RobotState start{{2.0, 5.0, 0.0}, 3.14159, 0.2};
  const auto ep = rollout(scripted(0.4, -5.0), open_world(), "open", start, {5.0, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(ep.outcome == Outcome::collision);
  CHECK(collides(open_world(), ep.path.back(), 0.2));
  for (std::size_t i = 0; i + 1 < ep.path.size(); ++i) CHECK_FALSE(collides(open_world(), ep.path[i], 0.2));
}

TEST_CASE("a fearful policy stops after the debounce without moving") {
  const RobotState start{{2.0, 5.0, 0.0}, 0.0, 0.2};
  const auto ep = rollout(scripted(0.4, 0.0), open_world(), "open", start, {5.0, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(ep.outcome == Outcome::feared_stop);
  CHECK(ep.steps == 3);
  CHECK(ep.executed_length == 0.0);
  CHECK(spl(std::vector<Episode>{ep}) == 0.0);
}

TEST_CASE("the step cap turns into a timeout") {
  // Goal 1 m behind: cap = ceil(4 * 1 / 0.5) = 8 steps, which walks 4 m off.
  const RobotState start{{3.0, 5.0, 0.0}, 0.0, 0.2};
  const auto ep = rollout(scripted(0.4, -5.0), open_world(), "open", start, {2.0, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(ep.outcome == Outcome::timeout);
  CHECK(ep.steps == 8);
  CHECK(ep.executed_length == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("an obstacle moving into the path causes a collision") {
  RolloutConfig cfg;
  cfg.moving.push_back({{5.0, 8.0, 0.0}, {0.0, -0.5, 0.0}, 0.4});
  const RobotState start{{2.0, 5.0, 0.0}, 0.0, 0.2};
  const auto still = rollout(scripted(0.4, -5.0), open_world(), "open", start, {8.0, 5.0, 0.0}, RolloutConfig{}, {});
  CHECK(still.outcome == Outcome::success);
  const auto ep = rollout(scripted(0.4, -5.0), open_world(), "open", start, {8.0, 5.0, 0.0}, cfg, {});
  CHECK(ep.outcome == Outcome::collision);
}

TEST_CASE("zero noise is bit-identical and noise only touches the goal transform") {
  const auto params = randomised(3);
  const auto pairs = sample_pairs(maze(), 6, PairSampling{}, 11);
  for (const auto& p : pairs) {
    const auto a = rollout(params, maze(), "m", p.start, p.goal, RolloutConfig{}, {0.0, 1});
    const auto b = rollout(params, maze(), "m", p.start, p.goal, RolloutConfig{}, {0.0, 2});
    CHECK(a.path == b.path);
    CHECK(a.outcome == b.outcome);
    CHECK(a.executed_length == b.executed_length);

    // The scripted policy ignores the goal, so heavy noise cannot change its
    // executed motion.
    const auto c = rollout(scripted(0.3, -5.0), maze(), "m", p.start, p.goal, RolloutConfig{}, {0.0, 1});
    const auto d = rollout(scripted(0.3, -5.0), maze(), "m", p.start, p.goal, RolloutConfig{}, {0.5, 9});
    CHECK(c.path == d.path);
    CHECK(c.outcome == d.outcome);
  }
  bool changed = false;
  for (const auto& p : pairs) {
    const auto a = rollout(params, maze(), "m", p.start, p.goal, RolloutConfig{}, {0.0, 1});
    const auto n = rollout(params, maze(), "m", p.start, p.goal, RolloutConfig{}, {0.2, 1});
    changed = changed || a.path != n.path;
  }
  CHECK(changed);
}

TEST_CASE("episodes respect the path-length and outcome invariants") {
  const auto params = randomised(4);
  RolloutConfig cfg;
  for (const auto& p : sample_pairs(maze(), 20, PairSampling{}, 12)) {
    const auto ep = rollout(params, maze(), "m", p.start, p.goal, cfg, {});
    const double to_goal = distance(ep.path.back(), ep.goal);
    CHECK((ep.outcome == Outcome::success) == (to_goal <= cfg.goal_radius));
    if (ep.outcome == Outcome::success)
      CHECK(ep.executed_length >= distance(p.start.position, p.goal) - cfg.goal_radius - 1e-9);
    if (ep.outcome == Outcome::collision) CHECK(collides(maze(), ep.path.back(), p.start.radius));
    CHECK(ep.path.front() == p.start.position);
  }
}

TEST_CASE("pair sampling is deterministic and honours the band") {
  PairSampling s;
  const auto a = sample_pairs(maze(), 30, s, 5), b = sample_pairs(maze(), 30, s, 5);
  REQUIRE(a.size() == 30);
  const ReachabilityIndex reach(maze(), s.robot_radius);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].start.position == b[i].start.position);
    CHECK(a[i].goal == b[i].goal);
    const double d = distance(a[i].start.position, a[i].goal);
    CHECK(d >= s.min_distance - 1e-9);
    CHECK(d <= s.max_distance + 1e-9);
    CHECK(reach.connected(a[i].start.position, a[i].goal));
    const double bearing = std::atan2(a[i].goal[1] - a[i].start.position[1], a[i].goal[0] - a[i].start.position[0]);
    CHECK(std::abs(std::remainder(bearing - a[i].start.heading, 2 * 3.141592653589793)) <= 1e-9);
  }
}

TEST_CASE("benchmark rows compose from individual rollouts and round-trip") {
  const auto params = randomised(5);
  const std::vector<NamedWorld> worlds{{"maze", maze()}, {"open", open_world()}};
  const std::vector<double> noise{0.0, 0.05};
  const auto report = benchmark(params, worlds, 4, noise, RolloutConfig{}, PairSampling{}, 21);
  REQUIRE(report.rows.size() == 2);
  const auto& row = report.rows[0];
  REQUIRE(row.episodes.size() == 8);
  for (std::size_t w = 0; w < worlds.size(); ++w) {
    const auto pairs = sample_pairs(worlds[w].world, 4, PairSampling{}, mix_seed(21, w));
    std::vector<Episode> mine;
    for (const auto& p : pairs) mine.push_back(rollout(params, worlds[w].world, worlds[w].name, p.start, p.goal, RolloutConfig{}, {}));
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(row.episodes[w * 4 + k].path == mine[k].path);
      CHECK(row.episodes[w * 4 + k].outcome == mine[k].outcome);
    }
    CHECK(row.world_spl[w].first == worlds[w].name);
    CHECK(row.world_spl[w].second == spl(mine));
  }
  CHECK(row.success + row.collision + row.timeout + row.feared_stop == 8);

  const auto again = benchmark(params, worlds, 4, noise, RolloutConfig{}, PairSampling{}, 21);
  CHECK(csv_of(again) == csv_of(report));
  CHECK(summary_json(again) == summary_json(report));

  std::istringstream in(csv_of(report));
  const auto rows = read_report_csv(in);
  REQUIRE(rows.size() == 16);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& e = row.episodes[i];
    CHECK(rows[i].sigma == 0.0);
    CHECK(rows[i].world == e.world);
    CHECK(rows[i].pair == i % 4);
    CHECK(rows[i].outcome == e.outcome);
    CHECK(rows[i].steps == e.steps);
    CHECK(rows[i].executed_length == e.executed_length);
    CHECK(rows[i].oracle_length == e.oracle_length);
    CHECK(rows[i].start == e.start.position);
    CHECK(rows[i].heading == e.start.heading);
    CHECK(rows[i].goal == e.goal);
  }
  CHECK(rows[8].sigma == 0.05);

  const auto dir = testing::scratch_dir("report");
  write_report(report, dir);
  std::ifstream summary(dir + "/summary.json");
  const auto doc = nlohmann::json::parse(summary);
  CHECK(doc == summary_json(report));
  CHECK(doc.at("rows").at(0).at("spl").get<double>() == row.spl);
  std::ifstream lat(dir + "/latency.json");
  CHECK(nlohmann::json::parse(lat).at("rows").size() == 2);
  std::istringstream bad("nope\n");
  CHECK_THROWS(read_report_csv(bad));
}

TEST_CASE("latency statistics") {
  const auto params = randomised(6);
  Rng rng(7);
  std::vector<PlanScene> scenes;
  for (int i = 0; i < 8; ++i) {
    PlanScene s{{std::vector<double>(16), 2.0, 10.0}, {rng.uniform(1, 4), rng.uniform(-1, 1), 0}};
    for (auto& r : s.obs.ranges) r = rng.uniform(0.5, 10);
    scenes.push_back(s);
  }
  CHECK_THROWS_AS(latency_stats(params, scenes, 0), std::invalid_argument);
  const auto st = latency_stats(params, scenes, 200);
  CHECK(st.samples == 200);
  CHECK(st.mean_ms > 0.0);
  CHECK(st.std_ms >= 0.0);

  // Ten times the key points and samples is far more spline work; compare the
  // best of several runs to keep scheduler noise out.
  auto cfg = small_policy();
  cfg.keypoints = 50;
  const auto big = init_policy(6, cfg);
  auto best = [&](const PolicyParams& p, std::size_t m) {
    double b = 1e9;
    for (int k = 0; k < 5; ++k) b = std::min(b, latency_stats(p, scenes, 300, m).mean_ms);
    return b;
  };
  CHECK(best(big, 80) > best(params, 8));
}

TEST_CASE("rollout config and scenarios parse") {
  RolloutConfig c;
  c.goal_radius = 0.4;
  c.moving.push_back({{1, 2, 0}, {0.1, 0, 0}, 0.25});
  const auto back = rollout_config_from_json(to_json(c));
  CHECK(back.goal_radius == 0.4);
  REQUIRE(back.moving.size() == 1);
  CHECK(back.moving[0].velocity == Position{0.1, 0, 0});
  CHECK_THROWS_AS(rollout_config_from_json({{"lookahead", 0.0}}), std::invalid_argument);

  const nlohmann::json doc = {{"name", "tiny"},
                              {"layout", {"#####", "#...#", "#.#.#", "#####"}},
                              {"cell_size", 0.5},
                              {"start", {{"position", {0.75, 0.75}}, {"heading", 1.0}}},
                              {"goal", {1.75, 1.25}},
                              {"expect", {"success", "timeout"}}};
  const auto s = scenario_from_json(doc);
  CHECK(s.name == "tiny");
  CHECK(s.world.shape().size[0] == 5);
  CHECK(s.world.shape().size[1] == 4);
  // First layout line is the top row, so the inner '#' sits at (2, 1).
  CHECK(s.world.occupied({2, 1, 0}));
  CHECK_FALSE(s.world.occupied({1, 2, 0}));
  CHECK(s.start.heading == 1.0);
  CHECK(s.expect == std::vector<Outcome>{Outcome::success, Outcome::timeout});
  auto bad = doc;
  bad["layout"] = {"##x##"};
  CHECK_THROWS_AS(scenario_from_json(bad), std::invalid_argument);
  bad["layout"] = {"####", "###"};
  CHECK_THROWS_AS(scenario_from_json(bad), std::invalid_argument);
  CHECK(parse_outcome(to_string(Outcome::feared_stop)) == Outcome::feared_stop);
  CHECK_THROWS(parse_outcome("crash"));
}

TEST_CASE("bundled scenarios load") {
  for (const char* name : {"dead_end.json", "moving_disc.json"}) {
    const auto s = load_scenario(std::string(IPLAN_SOURCE_DIR) + "/scenarios/" + name);
    CHECK_FALSE(s.expect.empty());
    CHECK_FALSE(collides(s.world, s.start.position, s.start.radius));
    CHECK_FALSE(collides(s.world, s.goal, s.start.radius));
  }
}
