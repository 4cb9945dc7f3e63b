#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/policy.hpp"
#include "iplan/trainer.hpp"
#include "iplan/world.hpp"

namespace iplan {

enum class Outcome { success, collision, timeout, feared_stop };

std::string to_string(Outcome outcome);
Outcome parse_outcome(std::string_view name);

/// Disc obstacle moving at constant velocity; painted into the grid each step.
struct MovingDisc {
  Position start{};
  Position velocity{};  // meters per step
  double radius = 0.3;
};

struct RolloutConfig {
  double goal_radius = 0.3;
  double lookahead = 0.5;
  std::size_t fear_debounce = 3;
  /// Step cap is ceil(cap_factor * l / lookahead); default_cap when l is unknown.
  double cap_factor = 4.0;
  std::size_t default_cap = 60;
  std::size_t per_segment = 8;
  double fov = 2.0943951023931953;
  /// Spacing of ground-truth collision checks along the executed path, meters.
  double check_spacing = 0.02;
  std::vector<MovingDisc> moving;
};

nlohmann::json to_json(const RolloutConfig& c);
RolloutConfig rollout_config_from_json(const nlohmann::json& doc);

/// Zero-mean Gaussian perturbation of the pose used for the goal transform.
struct NoiseModel {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Episode {
  std::string world;
  RobotState start;
  Position goal{};
  Outcome outcome = Outcome::timeout;
  std::vector<Position> path;  // world frame, start first
  double executed_length = 0.0;
  std::optional<double> oracle_length;
  std::size_t steps = 0;
  std::vector<double> latency_ms;
};

/// Receding-horizon closed loop. Never throws for in-loop failures; those are
/// outcomes.
Episode rollout(const PolicyParams& params, const WorldModel& world, std::string world_name,
                const RobotState& start, const Position& goal, const RolloutConfig& config,
                const NoiseModel& noise);

/// Mean of S_i l_i / max(p_i, l_i). Throws on an empty list or a missing l_i.
double spl(std::span<const Episode> episodes);

struct LatencyStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t samples = 0;
};

struct PlanScene {
  RangeObservation obs;
  Position goal_robot{};
};

inline constexpr std::size_t kLatencyWarmup = 10;

/// Wall-clock per forward + spline over `repetitions` plans after the warm-up.
LatencyStats latency_stats(const PolicyParams& params, std::span<const PlanScene> scenes,
                           std::size_t repetitions, std::size_t per_segment = 8);

struct PairSampling {
  double min_distance = 2.0;
  double max_distance = 6.0;
  double robot_radius = 0.2;
  /// Start heading points at the goal when true, uniform otherwise.
  bool face_goal = true;
};

struct EvalPair {
  RobotState start;
  Position goal{};
};

/// Reachable start/goal pairs drawn deterministically from (world, seed).
std::vector<EvalPair> sample_pairs(const WorldModel& world, std::size_t count, const PairSampling& sampling,
                                   std::uint64_t seed);

struct NamedWorld {
  std::string name;
  WorldModel world;
};

struct NoiseRow {
  double sigma = 0.0;
  double spl = 0.0;
  std::vector<std::pair<std::string, double>> world_spl;
  std::size_t success = 0, collision = 0, timeout = 0, feared_stop = 0;
  double latency_mean_ms = 0.0;
  double latency_std_ms = 0.0;
  std::vector<Episode> episodes;
};

struct BenchmarkReport {
  std::vector<NoiseRow> rows;
};

BenchmarkReport benchmark(const PolicyParams& params, std::span<const NamedWorld> worlds, std::size_t pairs,
                          std::span<const double> noise_levels, const RolloutConfig& config,
                          const PairSampling& sampling, std::uint64_t seed);

/// Report files. summary.json and report.csv are deterministic; latency.json
/// holds the timing numbers.
nlohmann::json summary_json(const BenchmarkReport& report);
void write_report_csv(const BenchmarkReport& report, std::ostream& out);
void write_report(const BenchmarkReport& report, const std::filesystem::path& dir);

struct ReportRow {
  double sigma = 0.0;
  std::string world;
  std::size_t pair = 0;
  Outcome outcome = Outcome::timeout;
  std::size_t steps = 0;
  double executed_length = 0.0;
  std::optional<double> oracle_length;
  Position start{};
  double heading = 0.0;
  Position goal{};
};

std::vector<ReportRow> read_report_csv(std::istream& in);

/// Scripted scene: ASCII layout ('#' obstacle, '.' free, first line is the
/// top row), start pose and goal in meters, optional moving discs.
struct Scenario {
  std::string name;
  WorldModel world;
  RobotState start;
  Position goal{};
  std::vector<MovingDisc> moving;
  /// Outcomes the scenario accepts.
  std::vector<Outcome> expect;
};

Scenario scenario_from_json(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& path);

}  // namespace iplan
