#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/costmap.hpp"
#include "iplan/objective.hpp"
#include "iplan/optimizer.hpp"
#include "iplan/policy.hpp"
#include "iplan/rng.hpp"
#include "iplan/world.hpp"

namespace iplan {

/// Where training worlds come from: explicit world/cost-map file pairs, or a
/// procedural recipe expanded in memory.
struct WorldSource {
  struct FilePair {
    std::filesystem::path world;
    std::filesystem::path costmap;  // sidecar .json
  };
  std::vector<FilePair> files;

  std::vector<WorldFamily> families;  // cycled over seeds
  std::vector<std::uint64_t> seeds;
  WorldGenConfig gen;
  double sigma = 2.0;
  /// Obstacle growth before the distance transform, meters.
  double inflation = 0.0;
};

nlohmann::json to_json(const WorldSource& src);
WorldSource world_source_from_json(const nlohmann::json& doc);

struct GoalSampling {
  double min_distance = 0.5;
  double max_distance = 5.0;
  bool require_reachable = true;
  /// Goals lie within +-max_bearing of the heading (radians); pi means any.
  double max_bearing = 3.141592653589793;
};

struct TrainConfig {
  WorldSource train;
  WorldSource validation;
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  ad::OptimizerMode optimizer = ad::OptimizerMode::adam;
  std::uint64_t seed = 1;
  CostWeights weights;
  PolicyConfig policy;
  std::size_t per_segment = 8;  // m
  double fov = 2.0943951023931953;  // 120 degrees
  double robot_radius = 0.2;
  GoalSampling goals;
  std::size_t checkpoint_every = 5;
  std::size_t validation_samples = 256;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

/// World, its normalised cost map, and a reachability index, addressed by name.
class SceneWorld {
 public:
  SceneWorld(std::string name, WorldModel world, CostMap map, double robot_radius);
  SceneWorld(const SceneWorld&) = delete;
  SceneWorld& operator=(const SceneWorld&) = delete;

  const std::string& name() const { return name_; }
  const WorldModel& world() const { return world_; }
  const CostMap& map() const { return map_; }
  const ReachabilityIndex& reach() const { return reach_; }

 private:
  std::string name_;
  WorldModel world_;
  CostMap map_;
  ReachabilityIndex reach_;
};

using WorldSet = std::vector<std::unique_ptr<SceneWorld>>;

/// Loads or generates every world; cost maps are normalised to max 1.
/// Throws if a cost-map's geometry does not match its world.
WorldSet load_world_set(const WorldSource& src, double robot_radius);

struct TrainSample {
  std::size_t world = 0;  // index into the WorldSet
  RobotState pose;
  Position goal_world{};
  Position goal_robot{};
  RangeObservation obs;
};

nlohmann::json scene_descriptor(const TrainSample& sample, const WorldSet& worlds);

/// Poses uniform over collision-free space with uniform heading; goal distance
/// uniform over the band. Throws after 1000 rejected tries, naming the world.
std::vector<TrainSample> sample_batch(const WorldSet& worlds, const TrainConfig& config, Rng& rng,
                                      std::size_t count);

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(const std::string& what, nlohmann::json scene)
      : std::runtime_error(what), scene(std::move(scene)) {}
  nlohmann::json scene;
};

struct SampleResult {
  LossBreakdown loss;
  std::vector<std::vector<double>> grads;  // per parameter block
};

/// Forward, loss, and backward for one sample on a fresh tape.
SampleResult sample_gradient(const PolicyParams& params, const TrainSample& sample,
                             const WorldSet& worlds, const TrainConfig& config);

/// Loss only, with frozen parameters.
LossBreakdown sample_loss(const PolicyParams& params, const TrainSample& sample, const WorldSet& worlds,
                          const TrainConfig& config);

struct StepResult {
  LossBreakdown mean;
  double grad_norm = 0.0;
  std::vector<std::vector<double>> grads;  // batch mean
};

/// Mean of per-sample gradients, reduced in sample order.
StepResult batch_gradient(const PolicyParams& params, std::span<const TrainSample> batch,
                          const WorldSet& worlds, const TrainConfig& config);

/// batch_gradient followed by one optimizer step.
StepResult train_step(PolicyParams& params, std::span<const TrainSample> batch, const WorldSet& worlds,
                      const TrainConfig& config, ad::OptimizerState& opt);

struct ValidationResult {
  LossBreakdown mean;
  double fear_accuracy = 0.0;
  std::size_t samples = 0;
};

ValidationResult validate(const PolicyParams& params, std::span<const TrainSample> samples,
                          const WorldSet& worlds, const TrainConfig& config);

/// Training state at an epoch boundary.
struct TrainState {
  PolicyParams params;
  ad::OptimizerState optimizer;
  std::string rng_state;
  std::size_t epoch = 0;  // epochs completed
};

ad::Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config);
TrainState train_state_from_checkpoint(const ad::Checkpoint& ckpt);

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop after this many epochs in total (defaults to config.epochs).
  std::optional<std::size_t> stop_after;
  std::function<void(const nlohmann::json&)> on_epoch;
};

struct FitResult {
  TrainState state;
  std::vector<ValidationResult> validation;  // one per epoch run
  std::vector<std::filesystem::path> checkpoints;
};

/// Writes train_log.jsonl, ckpt_epoch_NNNN.ckpt every checkpoint_every epochs
/// and final.ckpt into out_dir.
FitResult fit(const TrainConfig& config, const FitOptions& options);

/// Keeps freed heap memory mapped between samples. Every sample builds and
/// drops a tape holding copies of the large weight blocks; with glibc's
/// default thresholds that memory is unmapped and faulted back in each time,
/// which costs about 40% of training wall time. No-op on other allocators.
void retain_heap_memory();

/// The held-out samples used by fit's validation pass.
std::vector<TrainSample> validation_set(const WorldSet& worlds, const TrainConfig& config);

}  // namespace iplan
