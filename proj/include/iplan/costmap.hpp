#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/autodiff.hpp"
#include "iplan/geometry.hpp"
#include "iplan/world.hpp"

namespace iplan {

/// Dense float64 field over a grid.
struct ScalarGrid {
  GridShape shape;
  std::vector<double> values;
};

/// Exact Euclidean distance (meters) from each obstacle cell centre to the
/// nearest free cell centre; free cells are 0. Separable lower-envelope
/// transform, one pass per axis. Throws if no cell is free.
ScalarGrid distance_to_free(const GridShape& shape, std::span<const std::uint8_t> occupancy,
                            double cell_size);

/// Normalised 1-D Gaussian taps for offsets -R..R, R = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamp-to-edge borders. sigma in cells, > 0.
ScalarGrid gaussian_smooth(const ScalarGrid& field, double sigma);

struct CostSample {
  double value = 0.0;
  Position gradient{};
};

/// Smoothed distance-to-free cost map with multilinear sampling.
///
/// Values live at cell centres (origin is the centre of cell 0) and are stored
/// as float32 so the raw dump round-trips exactly. Outside the world bounds
/// the sample clamps to the border and adds `oob_slope` per meter of overshoot.
class CostMap {
 public:
  CostMap(GridShape shape, double cell_size, Position origin, double sigma,
          std::vector<float> values, double value_scale = 1.0, double oob_slope = 1.0);

  const GridShape& shape() const { return shape_; }
  int dims() const { return shape_.dims; }
  double cell_size() const { return cell_size_; }
  const Position& origin() const { return origin_; }
  double sigma() const { return sigma_; }
  /// Factor the raw blurred distances were multiplied by (1 if unnormalised).
  double value_scale() const { return value_scale_; }
  double oob_slope() const { return oob_slope_; }
  std::span<const float> values() const { return values_; }
  double at(const Cell& c) const { return values_[shape_.index(c)]; }
  double max_value() const;

  CostSample sample(const Position& p) const;
  double value(const Position& p) const { return sample(p).value; }

  /// Copy rescaled so the maximum value is 1 (unchanged if the map is all zero).
  CostMap normalized() const;

  bool operator==(const CostMap&) const = default;

 private:
  GridShape shape_;
  double cell_size_;
  Position origin_;
  double sigma_;
  std::vector<float> values_;
  double value_scale_;
  double oob_slope_;
};

/// distance_to_free followed by gaussian_smooth, geometry taken from the world.
/// A positive `inflation` first grows obstacles by that radius (meters), so the
/// distance is measured in the robot's configuration space.
CostMap build_costmap(const WorldModel& world, double sigma = 2.0, double oob_slope = 1.0,
                      double inflation = 0.0);

/// Differentiable lookup: points (N x d, world frame) -> costs (N).
ad::Tensor sample_costs(const CostMap& map, const ad::Tensor& points);

// Export: <stem>.json sidecar {dims, shape, cell_size, origin, sigma, scale,
// value_scale, oob_slope}, <stem>.pgm (P5, 16-bit, pixel = round(value * scale)),
// <stem>.f32 (raw little-endian float32, x fastest).
nlohmann::json costmap_sidecar(const CostMap& map);
void save_costmap(const CostMap& map, const std::filesystem::path& stem);
CostMap load_costmap(const std::filesystem::path& sidecar);
/// Only the 2-D (or z = 0 slice for 3-D) preview image.
void write_pgm16(const CostMap& map, const std::filesystem::path& path, double scale);

}  // namespace iplan
