#pragma once

#include <nlohmann/json.hpp>

#include "iplan/autodiff.hpp"
#include "iplan/costmap.hpp"
#include "iplan/geometry.hpp"
#include "iplan/spline.hpp"

namespace iplan {

struct CostWeights {
  double alpha = 1.0;  // obstacle
  double beta = 1.0;   // goal
  double gamma = 0.2;  // motion

  /// All non-negative and not all zero.
  void validate() const;
};

nlohmann::json to_json(const CostWeights& w);
CostWeights cost_weights_from_json(const nlohmann::json& doc);

/// Per-sample loss terms. c_total = alpha c_obs + beta c_goal + gamma c_motion
/// and f_total = c_total + fear_loss.
struct LossBreakdown {
  double c_obs = 0.0;
  double c_goal = 0.0;
  double c_motion = 0.0;
  double c_total = 0.0;
  double fear_loss = 0.0;
  double f_total = 0.0;
  bool fear_label = false;
};

nlohmann::json to_json(const LossBreakdown& b);

/// Smoothing floor of the goal distance, meters.
inline constexpr double kGoalEpsilon = 1e-6;

/// Robot-frame points (N x d) -> world frame, differentiable.
ad::Tensor to_world_frame(const ad::Tensor& points, const RobotState& pose);

/// Sum of map costs over every row of `world_points`.
ad::Tensor obstacle_cost(const ad::Tensor& world_points, const CostMap& map);
/// sqrt(|last - goal|^2 + eps^2) - eps, both in the same frame.
ad::Tensor goal_cost(const ad::Tensor& traj, const Position& goal);
/// sum over i = 0..n-2 of | |goal - robot| / (n - 1) - arc_i |, where arc_i is
/// the polyline length of the samples between key points i and i + 1. The
/// trajectory is in the robot frame, so the robot sits at the origin.
ad::Tensor motion_cost(const ad::Tensor& traj, std::size_t keypoints, const Position& goal);
/// Binary cross entropy on the logit; the label carries no gradient.
ad::Tensor fear_loss(const ad::Tensor& fear_logit, bool label);

/// Tape handles of every term. f_total is the backward root.
struct LossTerms {
  ad::Tensor c_obs, c_goal, c_motion, c_total, fear, f_total;
  LossBreakdown breakdown(bool label) const;
};

/// traj: (m n + 1) x d in the robot frame; goal in the robot frame.
LossTerms total_loss(const ad::Tensor& traj, std::size_t keypoints, const Position& goal,
                     const RobotState& pose, const CostMap& map, const CostWeights& weights,
                     const ad::Tensor& fear_logit, bool label);

/// The same quantities computed from plain values, without a tape.
LossBreakdown evaluate_loss(const Trajectory& traj, const Position& goal, const RobotState& pose,
                            const CostMap& map, const CostWeights& weights, double fear_logit,
                            bool label);

/// Trajectory as an (m n + 1) x d constant on `tape`.
ad::Tensor trajectory_tensor(ad::Tape& tape, const Trajectory& traj);

}  // namespace iplan
