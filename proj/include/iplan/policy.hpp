#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/autodiff.hpp"
#include "iplan/checkpoint.hpp"
#include "iplan/geometry.hpp"
#include "iplan/optimizer.hpp"
#include "iplan/spline.hpp"
#include "iplan/world.hpp"

namespace iplan {

/// Network dimensions. The encoder runs two strided windows over the scan
/// (a 1-D stand-in for an image CNN), the goal gets a linear embedding, and the
/// concatenation feeds an MLP trunk with a key-point head and a fear head.
struct PolicyConfig {
  std::size_t rays = 64;
  double max_range = 10.0;
  std::size_t window = 5;
  std::size_t stride = 2;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t embedding = 128;
  std::size_t goal_embedding = 16;
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
  std::size_t keypoints = 5;
  int dims = 2;
  /// Goal coordinates are divided by this before embedding (meters).
  double goal_scale = 5.0;
  /// Raw head outputs are multiplied by this to give offsets in meters.
  double offset_scale = 1.0;

  std::size_t conv1_positions() const;
  std::size_t conv2_positions() const;
  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

nlohmann::json to_json(const PolicyConfig& config);
PolicyConfig policy_config_from_json(const nlohmann::json& doc);

/// All trainable weights, in a fixed block order.
struct PolicyParams {
  PolicyConfig config;
  ad::ParameterSet blocks;

  bool operator==(const PolicyParams&) const = default;
};

/// Closed-form weight count for a config.
std::size_t expected_parameter_count(const PolicyConfig& config);

/// Fan-in scaled uniform weights, zero biases, zero output heads.
PolicyParams init_policy(std::uint64_t seed, const PolicyConfig& config);

/// Places every block on the tape, as variables (training) or constants.
std::vector<ad::Tensor> bind(ad::Tape& tape, const PolicyParams& params, bool trainable);

struct PolicyOutput {
  ad::Tensor keypoints;   // n x d, robot frame
  ad::Tensor fear_logit;  // scalar
};

/// Forward pass with pre-bound blocks. Throws on shape mismatch and on
/// non-finite activations (naming the layer).
PolicyOutput forward(ad::Tape& tape, const PolicyParams& params, std::span<const ad::Tensor> bound,
                     const RangeObservation& obs, const Position& goal_robot);
/// Inference convenience: binds the weights as constants.
PolicyOutput forward(ad::Tape& tape, const PolicyParams& params, const RangeObservation& obs,
                     const Position& goal_robot);

KeyPointPath to_keypoint_path(const ad::Tensor& keypoints, int dims);

/// Checkpoint arrays carry the blocks; meta["policy"] carries the config.
ad::Checkpoint to_checkpoint(const PolicyParams& params);
PolicyParams policy_from_checkpoint(const ad::Checkpoint& ckpt);

}  // namespace iplan
