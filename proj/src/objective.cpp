#include "iplan/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace iplan {

using nlohmann::json;

void CostWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0))
    throw std::invalid_argument("cost weights must be non-negative");
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0)
    throw std::invalid_argument("cost weights must not all be zero");
}

json to_json(const CostWeights& w) { return json{{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}}; }

CostWeights cost_weights_from_json(const json& doc) {
  CostWeights w;
  w.alpha = doc.value("alpha", w.alpha);
  w.beta = doc.value("beta", w.beta);
  w.gamma = doc.value("gamma", w.gamma);
  w.validate();
  return w;
}

json to_json(const LossBreakdown& b) {
  return json{{"c_obs", b.c_obs},         {"c_goal", b.c_goal},   {"c_motion", b.c_motion},
              {"c_total", b.c_total},     {"fear_loss", b.fear_loss}, {"f_total", b.f_total},
              {"fear_label", b.fear_label}};
}

namespace {

std::size_t check_points(const ad::Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() != 2 || s[1] < 2 || s[1] > 3 || s[0] == 0)
    throw ad::ShapeError(std::string(op) + ": expected N x d points, got " + ad::shape_string(s));
  return s[1];
}

// Euclidean length of each row; the subgradient at a zero row is 0.
ad::Tensor row_norms(const ad::Tensor& rows) {
  const std::size_t n = rows.shape()[0], d = rows.shape()[1];
  const auto v = rows.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t a = 0; a < d; ++a) sq += v[i * d + a] * v[i * d + a];
    out[i] = std::sqrt(sq);
  }
  const std::size_t in_id = rows.id();
  const ad::Tensor in[] = {rows};
  return rows.tape()->record({n}, std::move(out), in, [in_id, n, d](ad::Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto len = t.value_of(self);
    const auto x = t.value_of(in_id);
    auto gi = t.accumulate(in_id);
    for (std::size_t i = 0; i < n; ++i)
      if (len[i] > 0.0)
        for (std::size_t a = 0; a < d; ++a) gi[i * d + a] += g[i] * x[i * d + a] / len[i];
  });
}

double goal_norm(const Position& goal, std::size_t d) {
  double sq = 0.0;
  for (std::size_t a = 0; a < d; ++a) sq += goal[a] * goal[a];
  return std::sqrt(sq);
}

}  // namespace

ad::Tensor to_world_frame(const ad::Tensor& points, const RobotState& pose) {
  const std::size_t d = check_points(points, "to_world_frame");
  const std::size_t n = points.shape()[0];
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  // Row-vector form: world = local * R^T + position.
  std::vector<double> rt(d * d, 0.0);
  rt[0 * d + 0] = c;
  rt[0 * d + 1] = s;
  rt[1 * d + 0] = -s;
  rt[1 * d + 1] = c;
  if (d == 3) rt[2 * d + 2] = 1.0;
  std::vector<double> offset(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) offset[i * d + a] = pose.position[a];
  ad::Tape& tape = *points.tape();
  return ad::matmul(points, tape.constant({d, d}, std::move(rt))) + tape.constant({n, d}, std::move(offset));
}

ad::Tensor obstacle_cost(const ad::Tensor& world_points, const CostMap& map) {
  return ad::sum(sample_costs(map, world_points));
}

ad::Tensor goal_cost(const ad::Tensor& traj, const Position& goal) {
  const std::size_t d = check_points(traj, "goal_cost");
  const std::size_t n = traj.shape()[0];
  const ad::Tensor last = ad::slice(traj, 0, n - 1, n);
  const ad::Tensor diff = last - traj.tape()->constant({1, d}, std::vector<double>(goal.begin(), goal.begin() + d));
  const ad::Tensor sq = ad::add_scalar(ad::sum(diff * diff), kGoalEpsilon * kGoalEpsilon);
  return ad::add_scalar(ad::sqrt(sq), -kGoalEpsilon);
}

ad::Tensor motion_cost(const ad::Tensor& traj, std::size_t keypoints, const Position& goal) {
  const std::size_t d = check_points(traj, "motion_cost");
  const std::size_t rows = traj.shape()[0];
  if (keypoints < 2 || (rows - 1) % keypoints != 0)
    throw ad::ShapeError("motion_cost: " + std::to_string(rows) + " samples do not split into " +
                         std::to_string(keypoints) + " segments");
  const std::size_t m = (rows - 1) / keypoints;
  const std::size_t intervals = keypoints - 1;

  const ad::Tensor chords = row_norms(ad::slice(traj, 0, 1, rows) - ad::slice(traj, 0, 0, rows - 1));
  // Interval i spans control points i + 1 .. i + 2, i.e. chords (i + 1) m .. (i + 2) m - 1.
  std::vector<double> select(intervals * (rows - 1), 0.0);
  for (std::size_t i = 0; i < intervals; ++i)
    for (std::size_t k = (i + 1) * m; k < (i + 2) * m; ++k) select[i * (rows - 1) + k] = 1.0;
  ad::Tape& tape = *traj.tape();
  const ad::Tensor arcs = ad::matmul(tape.constant({intervals, rows - 1}, std::move(select)),
                                     ad::reshape(chords, {rows - 1, 1}));
  const double share = goal_norm(goal, d) / static_cast<double>(intervals);
  const ad::Tensor target = tape.constant({intervals, 1}, std::vector<double>(intervals, share));
  return ad::sum(ad::abs(target - arcs));
}

ad::Tensor fear_loss(const ad::Tensor& fear_logit, bool label) {
  if (fear_logit.size() != 1) throw ad::ShapeError("fear_loss: logit must be a single value");
  return ad::sum(label ? ad::softplus(ad::scale(fear_logit, -1.0)) : ad::softplus(fear_logit));
}

LossBreakdown LossTerms::breakdown(bool label) const {
  return LossBreakdown{c_obs.item(), c_goal.item(), c_motion.item(), c_total.item(),
                       fear.item(),  f_total.item(), label};
}

LossTerms total_loss(const ad::Tensor& traj, std::size_t keypoints, const Position& goal,
                     const RobotState& pose, const CostMap& map, const CostWeights& weights,
                     const ad::Tensor& fear_logit, bool label) {
  weights.validate();
  LossTerms t;
  t.c_obs = obstacle_cost(to_world_frame(traj, pose), map);
  t.c_goal = goal_cost(traj, goal);
  t.c_motion = motion_cost(traj, keypoints, goal);
  t.c_total = ad::scale(t.c_obs, weights.alpha) + ad::scale(t.c_goal, weights.beta) +
              ad::scale(t.c_motion, weights.gamma);
  t.fear = fear_loss(fear_logit, label);
  t.f_total = t.c_total + t.fear;
  return t;
}

LossBreakdown evaluate_loss(const Trajectory& traj, const Position& goal, const RobotState& pose,
                            const CostMap& map, const CostWeights& weights, double fear_logit,
                            bool label) {
  weights.validate();
  const std::size_t d = static_cast<std::size_t>(traj.dims);
  const auto& pts = traj.points;
  LossBreakdown b;
  b.fear_label = label;
  for (const Position& p : pts) b.c_obs += map.value(to_world(pose, p));

  double sq = 0.0;
  for (std::size_t a = 0; a < d; ++a) sq += (pts.back()[a] - goal[a]) * (pts.back()[a] - goal[a]);
  b.c_goal = std::sqrt(sq + kGoalEpsilon * kGoalEpsilon) - kGoalEpsilon;

  const std::size_t n = traj.segments, m = traj.per_segment;
  const double share = goal_norm(goal, d) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double arc = 0.0;
    for (std::size_t k = (i + 1) * m; k < (i + 2) * m; ++k) arc += distance(pts[k], pts[k + 1]);
    b.c_motion += std::abs(share - arc);
  }
  b.c_total = weights.alpha * b.c_obs + weights.beta * b.c_goal + weights.gamma * b.c_motion;
  // Stable softplus of the signed logit.
  const double z = label ? -fear_logit : fear_logit;
  b.fear_loss = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  b.f_total = b.c_total + b.fear_loss;
  return b;
}

ad::Tensor trajectory_tensor(ad::Tape& tape, const Trajectory& traj) {
  const std::size_t d = static_cast<std::size_t>(traj.dims);
  std::vector<double> flat(traj.points.size() * d);
  for (std::size_t i = 0; i < traj.points.size(); ++i)
    for (std::size_t a = 0; a < d; ++a) flat[i * d + a] = traj.points[i][a];
  return tape.constant({traj.points.size(), d}, std::move(flat));
}

}  // namespace iplan
