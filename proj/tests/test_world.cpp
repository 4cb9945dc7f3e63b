#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "iplan/rng.hpp"
#include "iplan/world.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace iplan;

namespace {

WorldGenConfig cells64() {
  WorldGenConfig c;
  c.cells = {64, 64, 1};
  return c;
}

bool ring_closed(const WorldModel& w) {
  const auto& s = w.shape();
  for (int y = 0; y < s.size[1]; ++y)
    for (int x = 0; x < s.size[0]; ++x)
      if ((x == 0 || y == 0 || x == s.size[0] - 1 || y == s.size[1] - 1) && !w.occupied({x, y, 0}))
        return false;
  return true;
}

// Marches in tiny fixed steps until the sample point enters an obstacle cell
// or leaves the grid.
double fine_step_range(const WorldModel& w, const Position& p, double angle, double max_range, double h) {
  for (double t = h; t < max_range; t += h) {
    const Position q{p[0] + t * std::cos(angle), p[1] + t * std::sin(angle), 0.0};
    const auto c = w.cell_of(q);
    if (!c || w.occupied(*c)) return t;
  }
  return max_range;
}

// Distance from p to the square cell region, by dense sampling of the square.
double sampled_box_distance(const WorldModel& w, const Cell& c, const Position& p, int samples) {
  const double cs = w.cell_size();
  const Position lo{w.bounds().lo[0] + c[0] * cs, w.bounds().lo[1] + c[1] * cs, 0.0};
  double best = 1e300;
  for (int i = 0; i <= samples; ++i)
    for (int j = 0; j <= samples; ++j) {
      const double x = lo[0] + cs * i / samples, y = lo[1] + cs * j / samples;
      best = std::min(best, std::hypot(p[0] - x, p[1] - y));
    }
  return best;
}

}  // namespace

TEST_CASE("generated worlds keep a closed boundary ring") {
  for (auto family : {WorldFamily::forest_scatter, WorldFamily::rooms, WorldFamily::corridors}) {
    const auto w = generate_world(family, 7, cells64());
    CHECK(ring_closed(w));
    CHECK(w.free_count() > 0);
    CHECK(w.shape().size == Cell{64, 64, 1});
  }
}

TEST_CASE("generation is deterministic per family, seed and config") {
  const auto a = generate_world(WorldFamily::forest_scatter, 7, cells64());
  const auto b = generate_world(WorldFamily::forest_scatter, 7, cells64());
  CHECK(a == b);
  const auto c = generate_world(WorldFamily::forest_scatter, 8, cells64());
  CHECK_FALSE(std::equal(a.occupancy().begin(), a.occupancy().end(), c.occupancy().begin()));
}

TEST_CASE("rooms seed 3 free-cell count matches the frozen golden file") {
  std::ifstream in(IPLAN_TEST_DATA "/golden/rooms_seed3_64.json");
  REQUIRE(in);
  const auto golden = nlohmann::json::parse(in);
  WorldGenConfig c = cells64();
  c.cell_size = golden.at("cell_size").get<double>();
  const auto w = generate_world(parse_world_family(golden.at("family").get<std::string>()),
                                golden.at("seed").get<std::uint64_t>(), c);
  CHECK(w.free_count() == golden.at("free_cells").get<std::size_t>());
}

TEST_CASE("generation rejects bad configs") {
  WorldGenConfig small;
  small.cells = {15, 64, 1};
  CHECK_THROWS_AS(generate_world(WorldFamily::rooms, 1, small), std::invalid_argument);
  WorldGenConfig negative = cells64();
  negative.density = -1.0;
  CHECK_THROWS_AS(generate_world(WorldFamily::rooms, 1, negative), std::invalid_argument);
  WorldGenConfig crowded = cells64();
  crowded.clearance_radius = 10.0;  // no cell survives inflation
  CHECK_THROWS_AS(generate_world(WorldFamily::forest_scatter, 1, crowded), std::invalid_argument);
}

TEST_CASE("world model constructor enforces its invariants") {
  GridShape shape{2, {5, 5, 1}};
  std::vector<std::uint8_t> open(shape.count(), 0);
  CHECK_THROWS_AS(WorldModel(shape, 0.1, open, 0), std::invalid_argument);  // boundary free
  std::vector<std::uint8_t> full(shape.count(), 1);
  CHECK_THROWS_AS(WorldModel(shape, 0.1, full, 0), std::invalid_argument);
  CHECK_THROWS_AS(WorldModel(shape, 0.1, std::vector<std::uint8_t>(3, 1), 0), std::invalid_argument);
  const auto w = testing::open_world(5, 5, 0.1);
  CHECK(w.bounds().hi[0] == doctest::Approx(0.5));
  CHECK(w.free_count() == 9);
}

TEST_CASE("scan in an empty interior reads max range everywhere") {
  const auto w = testing::open_world(120, 120, 0.1);
  const auto obs = render_scan(w, {{6.0, 6.0, 0.0}, 0.3, 0.2}, 64, 2 * std::numbers::pi * 0.99, 5.0);
  REQUIRE(obs.ranges.size() == 64);
  for (double r : obs.ranges) CHECK(r == 5.0);
}

TEST_CASE("scan hits a wall two meters ahead within half a cell") {
  std::vector<Cell> wall;
  for (int y = 1; y < 59; ++y) wall.push_back({31, y, 0});  // face at x = 3.1
  const auto w = testing::world_with(60, 60, 0.1, wall);
  const RobotState pose{{1.1, 3.0, 0.0}, 0.0, 0.2};
  const auto obs = render_scan(w, pose, 65, 2.0943951023931953, 10.0);
  const double ahead = obs.ranges[32];
  CHECK(std::abs(ahead - 2.0) <= 0.05);
  CHECK(std::abs(ahead - fine_step_range(w, pose.position, 0.0, 10.0, 1e-4)) <= 1e-4);
}

TEST_CASE("scan agrees with a fine-step ray marcher on a cluttered world") {
  const auto w = generate_world(WorldFamily::forest_scatter, 11, cells64());
  Rng rng(5);
  std::size_t rays = 0, mismatches = 0;
  for (int trial = 0; trial < 40; ++trial) {
    Position p{};
    do {
      p = {rng.uniform(0.1, 6.3), rng.uniform(0.1, 6.3), 0.0};
    } while (w.occupied(*w.cell_of(p)));
    const RobotState pose{p, rng.uniform(-3.1, 3.1), 0.2};
    const auto obs = render_scan(w, pose, 16, 2.0943951023931953, 4.0);
    for (std::size_t i = 0; i < obs.ranges.size(); ++i) {
      const double angle = pose.heading + obs.fov * (double(i) / 15.0 - 0.5);
      const double fine = fine_step_range(w, p, angle, 4.0, 1e-4);
      ++rays;
      // The marcher can only overshoot the exact boundary; grazing a corner
      // by less than its step can make it miss a hit entirely.
      CHECK(fine >= obs.ranges[i] - 1e-9);
      if (fine - obs.ranges[i] > 1.5e-4) ++mismatches;
    }
  }
  CHECK(mismatches * 100 <= rays);
}

TEST_CASE("scan rays follow the documented angle formula") {
  const auto w = testing::open_world(60, 60, 0.1);
  // Interior faces sit at 0.1 and 5.9; the pose is off centre so the two
  // diagonal rays hit different walls at different ranges.
  const auto obs = render_scan(w, {{2.0, 2.5, 0.0}, 0.0, 0.2}, 3, std::numbers::pi / 2, 10.0);
  const double diag = std::sqrt(2.0);
  CHECK(obs.ranges[0] == doctest::Approx(2.4 * diag).epsilon(1e-9));  // -pi/4
  CHECK(obs.ranges[1] == doctest::Approx(3.9).epsilon(1e-9));         // straight ahead
  CHECK(obs.ranges[2] == doctest::Approx(3.4 * diag).epsilon(1e-9));  // +pi/4
}

TEST_CASE("adding an obstacle never lengthens a ray") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Cell> blocks;
    for (int k = 0; k < 12; ++k)
      blocks.push_back({1 + int(rng.index(38)), 1 + int(rng.index(38)), 0});
    const Position p{2.05, 2.05, 0.0};
    std::erase_if(blocks, [](const Cell& c) { return c[0] == 20 && c[1] == 20; });
    const auto fewer = testing::world_with(40, 40, 0.1, {blocks.begin(), blocks.begin() + blocks.size() / 2});
    const auto more = testing::world_with(40, 40, 0.1, blocks);
    const RobotState pose{p, rng.uniform(-3.0, 3.0), 0.2};
    const auto a = render_scan(fewer, pose, 32, 2.0, 10.0);
    const auto b = render_scan(more, pose, 32, 2.0, 10.0);
    for (std::size_t i = 0; i < 32; ++i) CHECK(b.ranges[i] <= a.ranges[i]);
  }
}

TEST_CASE("scan refuses a pose inside an obstacle") {
  const auto w = testing::world_with(20, 20, 0.1, {{5, 5, 0}});
  CHECK_THROWS_AS(render_scan(w, {{0.55, 0.55, 0.0}, 0.0, 0.2}, 8, 2.0, 5.0), std::invalid_argument);
}

TEST_CASE("collision checks measure distance to the cell region") {
  const auto w = testing::world_with(40, 40, 0.1, {{20, 20, 0}});  // box [2.0, 2.1]^2
  const std::vector<Position> line{{1.0, 1.0, 0.0}, {1.5, 1.0, 0.0}, {2.5, 1.0, 0.0}};
  CHECK_FALSE(collides(w, line, 0.1));
  CHECK(collides(w, Position{2.05, 2.05, 0.0}, 0.1));
  CHECK(collides(w, Position{2.19, 2.05, 0.0}, 0.1));   // 0.09 from the face
  CHECK_FALSE(collides(w, Position{2.21, 2.05, 0.0}, 0.1));
  CHECK(collides(w, Position{-0.5, 2.0, 0.0}, 0.1));     // outside the bounds
}

TEST_CASE("point-to-box distance matches brute-force sampling of the box") {
  const auto w = testing::world_with(40, 40, 0.1, {{20, 20, 0}});
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const Position p{rng.uniform(1.7, 2.4), rng.uniform(1.7, 2.4), 0.0};
    const double exact = obstacle_distance(w, p, 0.8);
    const double sampled = sampled_box_distance(w, {20, 20, 0}, p, 400);
    // Sampling the square on a 400 x 400 lattice overestimates by at most
    // half a lattice diagonal.
    CHECK(exact <= sampled + 1e-12);
    CHECK(sampled - exact <= 0.1 / 400 * std::sqrt(2.0) / 2 + 1e-12);
  }
}

TEST_CASE("collision is monotone in the radius") {
  const auto w = generate_world(WorldFamily::rooms, 4, cells64());
  Rng rng(21);
  for (int k = 0; k < 300; ++k) {
    const Position p{rng.uniform(0.0, 6.4), rng.uniform(0.0, 6.4), 0.0};
    const double r = rng.uniform(0.0, 0.5);
    if (collides(w, p, r)) {
      CHECK(collides(w, p, r + rng.uniform(0.0, 0.3)));
    }
  }
}

TEST_CASE("shortest path basics") {
  // 1 m cells so the 3-4-5 triangle falls on cell centres.
  const auto w = testing::open_world(7, 7, 1.0, {-1.0, -1.0, 0.0});
  CHECK(*shortest_path_length(w, {0.2, 0.2, 0}, {0.3, 0.4, 0}, 0.0) == 0.0);
  const double len = *shortest_path_length(w, {0.0, 0.0, 0}, {3.0, 4.0, 0}, 0.0);
  CHECK(std::abs(len - 5.0) <= std::sqrt(2.0));
  CHECK_THROWS_AS(shortest_path_length(w, {-0.5, 2.0, 0}, {1.0, 1.0, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("shortest path around a U-shaped wall matches an independent Dijkstra") {
  std::vector<Cell> u;
  for (int x = 6; x <= 14; ++x) u.push_back({x, 14, 0});
  for (int y = 6; y <= 14; ++y) {
    u.push_back({6, y, 0});
    u.push_back({14, y, 0});
  }
  const auto w = testing::world_with(21, 21, 0.1, u);
  const Position start{1.05, 1.25, 0}, goal{1.05, 1.75, 0};  // inside / above the cup
  for (double radius : {0.0, 0.1}) {
    const auto got = shortest_path_length(w, start, goal, radius);
    const auto blocked = inflate(w, radius);
    const auto want = oracle::dijkstra_2d(w.shape(), blocked, *w.cell_of(start), *w.cell_of(goal), 0.1);
    REQUIRE(got.has_value());
    REQUIRE(want.has_value());
    CHECK(*got == doctest::Approx(*want).epsilon(1e-12));
    CHECK(*got > distance(start, goal) + 0.5);  // must go around
  }
}

TEST_CASE("shortest path reports unreachable goals") {
  std::vector<Cell> wall;
  for (int y = 1; y < 19; ++y) wall.push_back({10, y, 0});
  const auto w = testing::world_with(20, 20, 0.1, wall);
  CHECK_FALSE(shortest_path_length(w, {0.5, 0.5, 0}, {1.5, 0.5, 0}, 0.0).has_value());
  const ReachabilityIndex reach(w, 0.0);
  CHECK_FALSE(reach.connected({0.5, 0.5, 0}, {1.5, 0.5, 0}));
  CHECK(reach.connected({0.5, 0.5, 0}, {0.5, 1.5, 0}));
}

TEST_CASE("shortest path is symmetric and obeys the triangle inequality") {
  const auto w = generate_world(WorldFamily::forest_scatter, 12, cells64());
  const ReachabilityIndex reach(w, 0.1);
  Rng rng(4);
  auto draw = [&] {
    Position p{};
    do {
      p = {rng.uniform(0.0, 6.4), rng.uniform(0.0, 6.4), 0.0};
    } while (!reach.feasible(p));
    return p;
  };
  for (int k = 0; k < 20; ++k) {
    const Position a = draw(), b = draw(), c = draw();
    const auto ab = shortest_path_length(w, a, b, 0.1), ba = shortest_path_length(w, b, a, 0.1);
    REQUIRE(ab.has_value() == ba.has_value());
    if (!ab) continue;
    CHECK(*ab == doctest::Approx(*ba).epsilon(1e-12));
    const auto bc = shortest_path_length(w, b, c, 0.1), ac = shortest_path_length(w, a, c, 0.1);
    if (bc && ac) CHECK(*ac <= *ab + *bc + 1e-9);
  }
}

TEST_CASE("three-dimensional worlds use 26-connected moves") {
  WorldGenConfig c;
  c.dims = 3;
  c.cells = {16, 16, 16};
  c.density = 0.0;
  const auto w = generate_world(WorldFamily::forest_scatter, 1, c);
  CHECK(w.dims() == 3);
  const Position a{0.25, 0.25, 0.25}, b{0.55, 0.55, 0.55};
  const double len = *shortest_path_length(w, a, b, 0.0);
  CHECK(len == doctest::Approx(3 * std::sqrt(3.0) * 0.1).epsilon(1e-12));
}

TEST_CASE("world files round-trip bit-exactly") {
  const auto w = generate_world(WorldFamily::corridors, 5, cells64());
  const auto dir = testing::scratch_dir("world-io");
  save_world(w, dir + "/w.json");
  CHECK(load_world(dir + "/w.json") == w);
  CHECK(world_from_json(world_to_json(w)) == w);
  const std::vector<std::uint8_t> bits{1, 1, 0, 0, 0, 1};
  CHECK(encode_occupancy(bits) == "1x2 0x3 1x1");
  CHECK(decode_occupancy("1x2 0x3 1x1", 6) == bits);
  CHECK_THROWS_AS(decode_occupancy("1x2 0x3", 6), std::invalid_argument);
  CHECK_THROWS_AS(decode_occupancy("1xq", 6), std::invalid_argument);
}
