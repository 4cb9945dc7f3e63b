#include "iplan/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "iplan/rng.hpp"

namespace iplan {

using nlohmann::json;

std::size_t PolicyConfig::conv1_positions() const { return (rays - window) / stride + 1; }
std::size_t PolicyConfig::conv2_positions() const {
  return (conv1_positions() - window) / stride + 1;
}

void PolicyConfig::validate() const {
  if (window == 0 || stride == 0) throw std::invalid_argument("policy: window and stride must be positive");
  if (rays < window || conv1_positions() < window)
    throw std::invalid_argument("policy: scan too short for two strided windows");
  if (dims != 2 && dims != 3) throw std::invalid_argument("policy: dims must be 2 or 3");
  if (keypoints < 2) throw std::invalid_argument("policy: need at least 2 key points");
  if (!(max_range > 0.0) || !(goal_scale > 0.0) || !(offset_scale > 0.0))
    throw std::invalid_argument("policy: scales must be positive");
  if (conv1_channels == 0 || conv2_channels == 0 || embedding == 0 || goal_embedding == 0 ||
      hidden1 == 0 || hidden2 == 0)
    throw std::invalid_argument("policy: layer widths must be positive");
}

json to_json(const PolicyConfig& c) {
  return json{{"rays", c.rays},
              {"max_range", c.max_range},
              {"window", c.window},
              {"stride", c.stride},
              {"conv1_channels", c.conv1_channels},
              {"conv2_channels", c.conv2_channels},
              {"embedding", c.embedding},
              {"goal_embedding", c.goal_embedding},
              {"hidden1", c.hidden1},
              {"hidden2", c.hidden2},
              {"keypoints", c.keypoints},
              {"dims", c.dims},
              {"goal_scale", c.goal_scale},
              {"offset_scale", c.offset_scale}};
}

PolicyConfig policy_config_from_json(const json& doc) {
  PolicyConfig c;
  c.rays = doc.value("rays", c.rays);
  c.max_range = doc.value("max_range", c.max_range);
  c.window = doc.value("window", c.window);
  c.stride = doc.value("stride", c.stride);
  c.conv1_channels = doc.value("conv1_channels", c.conv1_channels);
  c.conv2_channels = doc.value("conv2_channels", c.conv2_channels);
  c.embedding = doc.value("embedding", c.embedding);
  c.goal_embedding = doc.value("goal_embedding", c.goal_embedding);
  c.hidden1 = doc.value("hidden1", c.hidden1);
  c.hidden2 = doc.value("hidden2", c.hidden2);
  c.keypoints = doc.value("keypoints", c.keypoints);
  c.dims = doc.value("dims", c.dims);
  c.goal_scale = doc.value("goal_scale", c.goal_scale);
  c.offset_scale = doc.value("offset_scale", c.offset_scale);
  c.validate();
  return c;
}

namespace {

struct BlockSpec {
  const char* name;
  std::size_t rows, cols;  // cols == 0: 1-D bias of length rows
  bool zero;               // output heads start at zero
};

std::vector<BlockSpec> block_specs(const PolicyConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.dims);
  const std::size_t flat = c.conv2_positions() * c.conv2_channels;
  return {
      {"enc.conv1.w", c.window, c.conv1_channels, false},
      {"enc.conv1.b", c.conv1_channels, 0, true},
      {"enc.conv2.w", c.window * c.conv1_channels, c.conv2_channels, false},
      {"enc.conv2.b", c.conv2_channels, 0, true},
      {"enc.fc.w", flat, c.embedding, false},
      {"enc.fc.b", c.embedding, 0, true},
      {"goal.w", d, c.goal_embedding, false},
      {"goal.b", c.goal_embedding, 0, true},
      {"trunk.fc1.w", c.embedding + c.goal_embedding, c.hidden1, false},
      {"trunk.fc1.b", c.hidden1, 0, true},
      {"trunk.fc2.w", c.hidden1, c.hidden2, false},
      {"trunk.fc2.b", c.hidden2, 0, true},
      {"head.keypoints.w", c.hidden2, c.keypoints * d, true},
      {"head.keypoints.b", c.keypoints * d, 0, true},
      {"head.fear.w", c.hidden2, 1, true},
      {"head.fear.b", 1, 0, true},
  };
}

enum Block : std::size_t {
  kConv1W, kConv1B, kConv2W, kConv2B, kFcW, kFcB, kGoalW, kGoalB,
  kTrunk1W, kTrunk1B, kTrunk2W, kTrunk2B, kKeyW, kKeyB, kFearW, kFearB, kBlockCount
};

void check_finite(const ad::Tensor& t, const char* layer) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw std::runtime_error(std::string("policy: non-finite activation in ") + layer);
}

}  // namespace

std::size_t expected_parameter_count(const PolicyConfig& c) {
  std::size_t total = 0;
  for (const BlockSpec& s : block_specs(c)) total += s.cols == 0 ? s.rows : s.rows * s.cols;
  return total;
}

PolicyParams init_policy(std::uint64_t seed, const PolicyConfig& config) {
  config.validate();
  PolicyParams params{config, {}};
  Rng rng(mix_seed(seed, 0x706f6c696379ULL));
  for (const BlockSpec& s : block_specs(config)) {
    ad::Parameter p;
    p.name = s.name;
    p.shape = s.cols == 0 ? ad::Shape{s.rows} : ad::Shape{s.rows, s.cols};
    p.values.assign(ad::element_count(p.shape), 0.0);
    if (!s.zero) {
      const double bound = std::sqrt(6.0 / static_cast<double>(s.rows));
      for (double& v : p.values) v = rng.uniform(-bound, bound);
    }
    params.blocks.push_back(std::move(p));
  }
  return params;
}

std::vector<ad::Tensor> bind(ad::Tape& tape, const PolicyParams& params, bool trainable) {
  std::vector<ad::Tensor> out;
  out.reserve(params.blocks.size());
  for (const ad::Parameter& p : params.blocks)
    out.push_back(trainable ? tape.variable(p.shape, std::span<const double>(p.values))
                            : tape.constant(p.shape, p.values));
  return out;
}

PolicyOutput forward(ad::Tape& tape, const PolicyParams& params, std::span<const ad::Tensor> w,
                     const RangeObservation& obs, const Position& goal_robot) {
  const PolicyConfig& c = params.config;
  if (w.size() != kBlockCount)
    throw ad::ShapeError("policy: expected " + std::to_string(int(kBlockCount)) + " bound blocks");
  if (obs.ranges.size() != c.rays)
    throw ad::ShapeError("policy: scan has " + std::to_string(obs.ranges.size()) + " rays, config expects " +
                         std::to_string(c.rays));
  const std::size_t d = static_cast<std::size_t>(c.dims);
  for (std::size_t a = 0; a < d; ++a)
    if (!std::isfinite(goal_robot[a])) throw std::invalid_argument("policy: non-finite goal");

  std::vector<double> scan(c.rays);
  for (std::size_t i = 0; i < c.rays; ++i) scan[i] = std::min(obs.ranges[i], c.max_range) / c.max_range;
  const ad::Tensor x = tape.constant({1, c.rays}, std::move(scan));

  // Strided windows as gathered patches.
  const std::size_t p1 = c.conv1_positions(), p2 = c.conv2_positions();
  std::vector<std::size_t> idx1;
  idx1.reserve(p1 * c.window);
  for (std::size_t p = 0; p < p1; ++p)
    for (std::size_t k = 0; k < c.window; ++k) idx1.push_back(p * c.stride + k);
  const ad::Tensor h1 = ad::relu(ad::affine(ad::gather(x, std::move(idx1), {p1, c.window}), w[kConv1W], w[kConv1B]));

  const std::size_t c1 = c.conv1_channels;
  std::vector<std::size_t> idx2;
  idx2.reserve(p2 * c.window * c1);
  for (std::size_t q = 0; q < p2; ++q)
    for (std::size_t k = 0; k < c.window; ++k)
      for (std::size_t ch = 0; ch < c1; ++ch) idx2.push_back((q * c.stride + k) * c1 + ch);
  const ad::Tensor h2 =
      ad::relu(ad::affine(ad::gather(h1, std::move(idx2), {p2, c.window * c1}), w[kConv2W], w[kConv2B]));
  const ad::Tensor obs_embedding =
      ad::relu(ad::affine(ad::reshape(h2, {1, p2 * c.conv2_channels}), w[kFcW], w[kFcB]));

  std::vector<double> g(d);
  for (std::size_t a = 0; a < d; ++a) g[a] = goal_robot[a] / c.goal_scale;
  const ad::Tensor goal_embedding = ad::affine(tape.constant({1, d}, std::move(g)), w[kGoalW], w[kGoalB]);

  const ad::Tensor joined[] = {obs_embedding, goal_embedding};
  const ad::Tensor t1 = ad::relu(ad::affine(ad::concat(joined, 1), w[kTrunk1W], w[kTrunk1B]));
  const ad::Tensor t2 = ad::relu(ad::affine(t1, w[kTrunk2W], w[kTrunk2B]));
  check_finite(t2, "trunk");

  // Key points accumulate predicted displacements: K_j = sum_{i <= j} offset_i.
  const std::size_t n = c.keypoints;
  const ad::Tensor offsets =
      ad::reshape(ad::scale(ad::affine(t2, w[kKeyW], w[kKeyB]), c.offset_scale), {n, d});
  std::vector<double> lower(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) lower[i * n + j] = 1.0;
  PolicyOutput out;
  out.keypoints = ad::matmul(tape.constant({n, n}, std::move(lower)), offsets);
  out.fear_logit = ad::reshape(ad::affine(t2, w[kFearW], w[kFearB]), {});
  check_finite(out.keypoints, "keypoint head");
  check_finite(out.fear_logit, "fear head");
  return out;
}

PolicyOutput forward(ad::Tape& tape, const PolicyParams& params, const RangeObservation& obs,
                     const Position& goal_robot) {
  const auto bound = bind(tape, params, false);
  return forward(tape, params, bound, obs, goal_robot);
}

KeyPointPath to_keypoint_path(const ad::Tensor& keypoints, int dims) {
  const auto v = keypoints.values();
  const std::size_t d = static_cast<std::size_t>(dims);
  KeyPointPath path{dims, std::vector<Position>(v.size() / d, Position{})};
  for (std::size_t j = 0; j < path.points.size(); ++j)
    for (std::size_t a = 0; a < d; ++a) path.points[j][a] = v[j * d + a];
  return path;
}

ad::Checkpoint to_checkpoint(const PolicyParams& params) {
  ad::Checkpoint ckpt;
  ckpt.arrays = params.blocks;
  ckpt.meta["policy"] = to_json(params.config);
  return ckpt;
}

PolicyParams policy_from_checkpoint(const ad::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("policy")) throw std::runtime_error("checkpoint: missing policy config");
  PolicyParams params{policy_config_from_json(ckpt.meta.at("policy")), {}};
  for (const BlockSpec& s : block_specs(params.config)) {
    const ad::Parameter& p = ckpt.find(s.name);
    const ad::Shape want = s.cols == 0 ? ad::Shape{s.rows} : ad::Shape{s.rows, s.cols};
    if (p.shape != want)
      throw ad::ShapeError("checkpoint: block '" + p.name + "' has shape " + ad::shape_string(p.shape) +
                           ", config expects " + ad::shape_string(want));
    params.blocks.push_back(p);
  }
  return params;
}

}  // namespace iplan
