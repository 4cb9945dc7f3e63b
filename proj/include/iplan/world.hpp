#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/geometry.hpp"

namespace iplan {

/// Axis-aligned workspace extent in meters.
struct Bounds {
  Position lo{};
  Position hi{};
};

/// Static occupancy-grid workspace. Immutable after construction.
///
/// Cell c covers [lo + c * cell_size, lo + (c + 1) * cell_size) on every
/// used axis. The constructor enforces: shape and bounds agree exactly,
/// every boundary cell is an obstacle, and at least one cell is free.
class WorldModel {
 public:
  WorldModel(GridShape shape, double cell_size, std::vector<std::uint8_t> occupancy,
             std::uint64_t seed, Position lo = {});

  int dims() const { return shape_.dims; }
  double cell_size() const { return cell_size_; }
  const GridShape& shape() const { return shape_; }
  Bounds bounds() const;
  std::uint64_t seed() const { return seed_; }
  std::span<const std::uint8_t> occupancy() const { return occupancy_; }

  bool occupied(const Cell& c) const { return occupancy_[shape_.index(c)] != 0; }
  std::size_t free_count() const;

  /// Cell containing p, or nullopt when p is outside the bounds.
  std::optional<Cell> cell_of(const Position& p) const;
  Position cell_center(const Cell& c) const;
  bool inside(const Position& p) const { return cell_of(p).has_value(); }

  bool operator==(const WorldModel&) const = default;

 private:
  GridShape shape_;
  double cell_size_;
  std::vector<std::uint8_t> occupancy_;
  std::uint64_t seed_;
  Position lo_;
};

enum class WorldFamily { rooms, corridors, forest_scatter };

std::string to_string(WorldFamily family);
WorldFamily parse_world_family(std::string_view name);

struct WorldGenConfig {
  int dims = 2;
  Cell cells{96, 96, 1};
  double cell_size = 0.1;
  /// Scales the number of generated obstacles for every family.
  double density = 1.0;
  /// Inflation radius used to decide whether a start/goal pair exists.
  double clearance_radius = 0.2;
};

/// Procedural world. Identical (family, seed, config) gives identical worlds.
/// Throws std::invalid_argument for bad configs or when no connected free
/// start/goal pair survives inflation by config.clearance_radius.
WorldModel generate_world(WorldFamily family, std::uint64_t seed, const WorldGenConfig& config);

/// Ego-centric planar range scan.
struct RangeObservation {
  std::vector<double> ranges;
  double fov = 0.0;
  double max_range = 0.0;
};

/// Casts `count` rays in the horizontal plane through the occupancy grid with
/// exact cell traversal. Ray i points at heading + fov * (i / (count - 1) - 1/2).
/// Throws std::invalid_argument if the robot centre lies inside an obstacle.
RangeObservation render_scan(const WorldModel& world, const RobotState& state, std::size_t count,
                             double fov, double max_range);

/// Distance from p to the nearest obstacle cell region, searching only up to
/// `search_radius`; returns +inf when nothing is that close. Space outside the
/// bounds counts as obstacle.
double obstacle_distance(const WorldModel& world, const Position& p, double search_radius);

/// Ground-truth contact: true iff some point is within `radius` of an
/// obstacle cell region (or outside the bounds).
bool collides(const WorldModel& world, std::span<const Position> points, double radius);
bool collides(const WorldModel& world, const Position& point, double radius);

/// Cells whose centre is in contact with an obstacle at the given radius.
std::vector<std::uint8_t> inflate(const WorldModel& world, double radius);

/// Shortest 8-connected (2D) / 26-connected (3D) path length in meters over
/// the radius-inflated grid, between the cells containing start and goal.
/// Diagonal moves must not cut blocked cells. nullopt means unreachable.
/// Throws std::invalid_argument if start or goal is blocked after inflation.
std::optional<double> shortest_path_length(const WorldModel& world, const Position& start,
                                           const Position& goal, double radius);

/// Connected components of the inflated free space, using the same move set as
/// shortest_path_length. Answers reachability in O(1).
class ReachabilityIndex {
 public:
  ReachabilityIndex(const WorldModel& world, double radius);

  bool feasible(const Position& p) const;
  bool connected(const Position& a, const Position& b) const;
  /// Cell count of the largest component.
  std::size_t largest_component() const { return largest_; }

 private:
  const WorldModel* world_;
  std::vector<int> label_;
  std::size_t largest_ = 0;
};

// World file: {version, dims, cell_size, bounds, seed, occupancy}, where
// occupancy is a row-major run-length string such as "1x97 0x94 1x2 ...".
nlohmann::json world_to_json(const WorldModel& world);
WorldModel world_from_json(const nlohmann::json& doc);
void save_world(const WorldModel& world, const std::filesystem::path& path);
WorldModel load_world(const std::filesystem::path& path);

std::string encode_occupancy(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> decode_occupancy(std::string_view text, std::size_t expected);

}  // namespace iplan
