#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace iplan {

/// Point in meters. Two-dimensional scenes leave z at zero.
using Position = std::array<double, 3>;
/// Integer grid coordinate; z is zero for two-dimensional grids.
using Cell = std::array<int, 3>;

/// Robot pose plus collision radius. Heading rotates about +z; the robot
/// frame has x forward and y to the left.
struct RobotState {
  Position position{};
  double heading = 0.0;
  double radius = 0.2;
};

inline double distance(const Position& a, const Position& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Robot frame -> world frame.
inline Position to_world(const RobotState& pose, const Position& local) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.position[0] + c * local[0] - s * local[1],
          pose.position[1] + s * local[0] + c * local[1],
          pose.position[2] + local[2]};
}

/// World frame -> robot frame.
inline Position to_robot(const RobotState& pose, const Position& world) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  const double dx = world[0] - pose.position[0], dy = world[1] - pose.position[1];
  return {c * dx + s * dy, -s * dx + c * dy, world[2] - pose.position[2]};
}

/// Dense grid extent with x varying fastest. Unused axes have size 1.
struct GridShape {
  int dims = 2;
  Cell size{1, 1, 1};

  std::size_t count() const {
    return static_cast<std::size_t>(size[0]) * static_cast<std::size_t>(size[1]) *
           static_cast<std::size_t>(size[2]);
  }
  std::size_t index(const Cell& c) const {
    return (static_cast<std::size_t>(c[2]) * static_cast<std::size_t>(size[1]) +
            static_cast<std::size_t>(c[1])) *
               static_cast<std::size_t>(size[0]) +
           static_cast<std::size_t>(c[0]);
  }
  Cell cell(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(size[0]);
    const auto ny = static_cast<std::size_t>(size[1]);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
            static_cast<int>(idx / (nx * ny))};
  }
  bool contains(const Cell& c) const {
    for (int a = 0; a < 3; ++a)
      if (c[a] < 0 || c[a] >= size[a]) return false;
    return true;
  }
  bool operator==(const GridShape&) const = default;
};

}  // namespace iplan
