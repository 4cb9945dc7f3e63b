#pragma once

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "iplan/autodiff.hpp"
#include "iplan/geometry.hpp"

namespace iplan {

/// n key points in the robot frame. The frame origin is not included; the
/// spline prepends it as control point 0.
struct KeyPointPath {
  int dims = 2;
  std::vector<Position> points;
};

/// Dense spline samples in the robot frame: m * n + 1 points, the origin
/// first, key point j - 1 exactly at index j * m.
struct Trajectory {
  int dims = 2;
  std::size_t segments = 0;  // n
  std::size_t per_segment = 0;  // m
  std::vector<Position> points;

  std::size_t key_index(std::size_t control) const { return control * per_segment; }
  /// Spline parameter of sample i (control points sit at integers).
  double time(std::size_t i) const { return static_cast<double>(i) / per_segment; }
  /// Key-point interval a sample belongs to; the final sample maps to n - 1.
  std::size_t segment(std::size_t i) const {
    return std::min(i / per_segment, segments - 1);
  }
};

/// Thomas algorithm. sub[0] and sup[n-1] are ignored. Throws on a zero pivot.
std::vector<double> solve_tridiagonal(std::span<const double> sub, std::span<const double> diag,
                                      std::span<const double> sup, std::span<const double> rhs);

/// Second derivatives of the natural cubic spline through `values` at unit
/// knot spacing: M_0 = M_N = 0 and M_{j-1} + 4 M_j + M_{j+1} =
/// 6 (y_{j+1} - 2 y_j + y_{j-1}) inside.
std::vector<double> natural_second_derivatives(std::span<const double> values);

/// Samples one axis of the spline at t = j + k/m plus the last knot.
std::vector<double> sample_natural_spline(std::span<const double> values, std::size_t m);

Trajectory interpolate(const KeyPointPath& path, std::size_t m);

/// Differentiable form: key points (n x d) -> trajectory ((m n + 1) x d).
/// The map is linear; backward applies its exact adjoint.
ad::Tensor interpolate(const ad::Tensor& keypoints, std::size_t m);

struct JacobianReport {
  double max_abs_deviation = 0.0;
  /// |tape - fd| / max(1, |fd|)
  double max_rel_deviation = 0.0;
  std::size_t entries = 0;
};

/// Compares tape gradients of sum_i c_i . tau_i (random c) against central
/// differences over every key-point coordinate.
JacobianReport jacobian_check(const KeyPointPath& path, std::size_t m, std::uint64_t seed = 1);

/// CSV: index,t,x,y[,z],segment
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

}  // namespace iplan
