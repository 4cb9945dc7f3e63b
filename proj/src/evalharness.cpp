#include "iplan/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "iplan/rng.hpp"
#include "iplan/spline.hpp"

namespace iplan {

using nlohmann::json;

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::success: return "success";
    case Outcome::collision: return "collision";
    case Outcome::timeout: return "timeout";
    case Outcome::feared_stop: return "feared-stop";
  }
  return "unknown";
}

Outcome parse_outcome(std::string_view name) {
  if (name == "success") return Outcome::success;
  if (name == "collision") return Outcome::collision;
  if (name == "timeout") return Outcome::timeout;
  if (name == "feared-stop") return Outcome::feared_stop;
  throw std::invalid_argument("unknown outcome '" + std::string(name) + "'");
}

namespace {

Position position_from_json(const json& a) {
  Position p{};
  if (!a.is_array() || a.size() < 2 || a.size() > 3) throw std::invalid_argument("position must have 2 or 3 entries");
  for (std::size_t i = 0; i < a.size(); ++i) p[i] = a[i].get<double>();
  return p;
}

json position_json(const Position& p, int dims) {
  json a = json::array();
  for (int i = 0; i < dims; ++i) a.push_back(p[i]);
  return a;
}

}  // namespace

json to_json(const RolloutConfig& c) {
  json moving = json::array();
  for (const MovingDisc& m : c.moving)
    moving.push_back({{"start", position_json(m.start, 3)}, {"velocity", position_json(m.velocity, 3)},
                      {"radius", m.radius}});
  return json{{"goal_radius", c.goal_radius}, {"lookahead", c.lookahead},     {"fear_debounce", c.fear_debounce},
              {"cap_factor", c.cap_factor},   {"default_cap", c.default_cap}, {"per_segment", c.per_segment},
              {"fov", c.fov},                 {"check_spacing", c.check_spacing}, {"moving", moving}};
}

RolloutConfig rollout_config_from_json(const json& doc) {
  RolloutConfig c;
  c.goal_radius = doc.value("goal_radius", c.goal_radius);
  c.lookahead = doc.value("lookahead", c.lookahead);
  c.fear_debounce = doc.value("fear_debounce", c.fear_debounce);
  c.cap_factor = doc.value("cap_factor", c.cap_factor);
  c.default_cap = doc.value("default_cap", c.default_cap);
  c.per_segment = doc.value("per_segment", c.per_segment);
  c.fov = doc.value("fov", c.fov);
  c.check_spacing = doc.value("check_spacing", c.check_spacing);
  if (doc.contains("moving"))
    for (const json& m : doc.at("moving"))
      c.moving.push_back({position_from_json(m.at("start")), position_from_json(m.at("velocity")),
                          m.value("radius", 0.3)});
  if (!(c.goal_radius > 0.0) || !(c.lookahead > 0.0) || !(c.check_spacing > 0.0) || c.fear_debounce == 0)
    throw std::invalid_argument("rollout config: radius, lookahead, spacing and debounce must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Rollout

namespace {

WorldModel with_discs(const WorldModel& world, std::span<const MovingDisc> discs, std::size_t step) {
  std::vector<std::uint8_t> occ(world.occupancy().begin(), world.occupancy().end());
  const GridShape& shape = world.shape();
  for (std::size_t i = 0; i < occ.size(); ++i) {
    if (occ[i]) continue;
    const Position c = world.cell_center(shape.cell(i));
    for (const MovingDisc& d : discs) {
      Position centre = d.start;
      for (int a = 0; a < 3; ++a) centre[a] += d.velocity[a] * static_cast<double>(step);
      if (distance(c, centre) <= d.radius) occ[i] = 1;
    }
  }
  return WorldModel(shape, world.cell_size(), std::move(occ), world.seed(), world.bounds().lo);
}

struct Walk {
  Position end;
  double length = 0.0;
  double heading;
  std::optional<Outcome> outcome;
};

// Moves along the polyline for at most `budget` meters, checking contact and
// goal arrival at every sub-step.
Walk walk(const WorldModel& world, std::span<const Position> polyline, double budget, const Position& goal,
          double radius, const RolloutConfig& config, std::vector<Position>& path, double heading) {
  Walk w{polyline.front(), 0.0, heading, std::nullopt};
  for (std::size_t i = 0; i + 1 < polyline.size() && w.length < budget; ++i) {
    const Position& a = polyline[i];
    const Position& b = polyline[i + 1];
    const double seg = distance(a, b);
    if (seg <= 0.0) continue;
    const double usable = std::min(seg, budget - w.length);
    const auto pieces = static_cast<std::size_t>(std::ceil(usable / config.check_spacing));
    for (std::size_t k = 1; k <= pieces; ++k) {
      const double s = usable * static_cast<double>(k) / static_cast<double>(pieces) / seg;
      Position p{};
      for (int ax = 0; ax < 3; ++ax) p[ax] = a[ax] + s * (b[ax] - a[ax]);
      w.length += distance(w.end, p);
      w.end = p;
      if (collides(world, p, radius)) {
        w.outcome = Outcome::collision;
        break;
      }
      if (distance(p, goal) <= config.goal_radius) {
        w.outcome = Outcome::success;
        break;
      }
    }
    w.heading = std::atan2(b[1] - a[1], b[0] - a[0]);
    // Keep the recorded polyline at the resolution of the plan.
    path.push_back(w.end);
    if (w.outcome) break;
  }
  return w;
}

}  // namespace

Episode rollout(const PolicyParams& params, const WorldModel& world, std::string world_name,
                const RobotState& start, const Position& goal, const RolloutConfig& config,
                const NoiseModel& noise) {
  Episode ep;
  ep.world = std::move(world_name);
  ep.start = start;
  ep.goal = goal;
  ep.path = {start.position};
  try {
    ep.oracle_length = shortest_path_length(world, start.position, goal, start.radius);
  } catch (const std::invalid_argument&) {
    ep.oracle_length.reset();
  }
  const std::size_t cap =
      ep.oracle_length
          ? std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.cap_factor * *ep.oracle_length /
                                                                        config.lookahead)))
          : config.default_cap;

  Rng noise_rng(noise.seed);
  RobotState pose = start;
  std::size_t feared = 0;
  const int d = world.dims();
  for (std::size_t step = 0;; ++step) {
    std::optional<WorldModel> painted;
    if (!config.moving.empty()) painted.emplace(with_discs(world, config.moving, step));
    const WorldModel& scene = painted ? *painted : world;
    if (collides(scene, pose.position, pose.radius)) {
      ep.outcome = Outcome::collision;
      break;
    }
    if (distance(pose.position, goal) <= config.goal_radius) {
      ep.outcome = Outcome::success;
      break;
    }
    if (step >= cap) {
      ep.outcome = Outcome::timeout;
      break;
    }
    const RangeObservation obs =
        render_scan(scene, pose, params.config.rays, config.fov, params.config.max_range);
    RobotState believed = pose;
    if (noise.sigma > 0.0)
      for (int a = 0; a < d; ++a) believed.position[a] += noise.sigma * noise_rng.normal();
    const Position goal_robot = to_robot(believed, goal);

    const auto t0 = std::chrono::steady_clock::now();
    ad::Tape tape;
    const PolicyOutput out = forward(tape, params, obs, goal_robot);
    const Trajectory traj = interpolate(to_keypoint_path(out.keypoints, d), config.per_segment);
    const auto t1 = std::chrono::steady_clock::now();
    ep.latency_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    ++ep.steps;

    // mu >= 0.5 iff logit >= 0.
    if (out.fear_logit.item() >= 0.0) {
      if (++feared >= config.fear_debounce) {
        ep.outcome = Outcome::feared_stop;
        break;
      }
      continue;
    }
    feared = 0;

    std::vector<Position> polyline(traj.points.size());
    for (std::size_t i = 0; i < polyline.size(); ++i) polyline[i] = to_world(pose, traj.points[i]);
    const Walk w = walk(scene, polyline, config.lookahead, goal, pose.radius, config, ep.path, pose.heading);
    ep.executed_length += w.length;
    pose.position = w.end;
    pose.heading = w.heading;
    if (w.outcome) {
      ep.outcome = *w.outcome;
      break;
    }
  }
  return ep;
}

double spl(std::span<const Episode> episodes) {
  if (episodes.empty()) throw std::invalid_argument("spl: no episodes");
  double total = 0.0;
  for (const Episode& e : episodes) {
    if (!e.oracle_length) throw std::invalid_argument("spl: episode without an oracle length");
    if (e.outcome != Outcome::success) continue;
    const double l = *e.oracle_length, p = e.executed_length;
    const double denom = std::max(p, l);
    total += denom > 0.0 ? l / denom : 1.0;
  }
  return total / static_cast<double>(episodes.size());
}

LatencyStats latency_stats(const PolicyParams& params, std::span<const PlanScene> scenes, std::size_t repetitions,
                           std::size_t per_segment) {
  if (repetitions == 0) throw std::invalid_argument("latency_stats: repetitions must be at least 1");
  if (scenes.empty()) throw std::invalid_argument("latency_stats: no scenes");
  const auto plan = [&](const PlanScene& s) {
    ad::Tape tape;
    const PolicyOutput out = forward(tape, params, s.obs, s.goal_robot);
    return interpolate(to_keypoint_path(out.keypoints, params.config.dims), per_segment).points.size();
  };
  std::size_t sink = 0;
  for (std::size_t i = 0; i < kLatencyWarmup; ++i) sink += plan(scenes[i % scenes.size()]);
  std::vector<double> ms(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink += plan(scenes[i % scenes.size()]);
    ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  if (sink == 0) throw std::logic_error("latency_stats: empty plans");
  LatencyStats st;
  st.samples = repetitions;
  for (double v : ms) st.mean_ms += v;
  st.mean_ms /= static_cast<double>(repetitions);
  for (double v : ms) st.std_ms += (v - st.mean_ms) * (v - st.mean_ms);
  st.std_ms = std::sqrt(st.std_ms / static_cast<double>(repetitions));
  return st;
}

// ---------------------------------------------------------------------------
// Benchmark

std::vector<EvalPair> sample_pairs(const WorldModel& world, std::size_t count, const PairSampling& sampling,
                                   std::uint64_t seed) {
  const ReachabilityIndex reach(world, sampling.robot_radius);
  Rng rng(seed);
  const Bounds b = world.bounds();
  const auto ok = [&](const Position& p) {
    return reach.feasible(p) && !collides(world, p, sampling.robot_radius);
  };
  std::vector<EvalPair> pairs;
  const std::size_t budget = 1000 * std::max<std::size_t>(count, 1);
  for (std::size_t tries = 0; pairs.size() < count; ++tries) {
    if (tries >= budget) throw std::runtime_error("sample_pairs: could not place enough start/goal pairs");
    Position s{};
    for (int a = 0; a < world.dims(); ++a) s[a] = rng.uniform(b.lo[a], b.hi[a]);
    const double dist = rng.uniform(sampling.min_distance, sampling.max_distance);
    const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    Position g = s;
    g[0] += dist * std::cos(bearing);
    g[1] += dist * std::sin(bearing);
    if (!ok(s) || !ok(g) || !reach.connected(s, g)) continue;
    pairs.push_back({RobotState{s, sampling.face_goal ? bearing : heading, sampling.robot_radius}, g});
  }
  return pairs;
}

BenchmarkReport benchmark(const PolicyParams& params, std::span<const NamedWorld> worlds, std::size_t pairs,
                          std::span<const double> noise_levels, const RolloutConfig& config,
                          const PairSampling& sampling, std::uint64_t seed) {
  if (worlds.empty() || noise_levels.empty()) throw std::invalid_argument("benchmark: no worlds or noise levels");
  std::vector<std::vector<EvalPair>> world_pairs;
  for (std::size_t w = 0; w < worlds.size(); ++w)
    world_pairs.push_back(sample_pairs(worlds[w].world, pairs, sampling, mix_seed(seed, w)));

  BenchmarkReport report;
  for (double sigma : noise_levels) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("benchmark: noise sigma must be >= 0");
    NoiseRow row;
    row.sigma = sigma;
    std::vector<double> lat;
    for (std::size_t w = 0; w < worlds.size(); ++w) {
      const std::size_t first = row.episodes.size();
      for (std::size_t k = 0; k < world_pairs[w].size(); ++k) {
        const EvalPair& p = world_pairs[w][k];
        const NoiseModel noise{sigma, mix_seed(seed ^ 0x6e6f697365ULL, w * pairs + k)};
        row.episodes.push_back(rollout(params, worlds[w].world, worlds[w].name, p.start, p.goal, config, noise));
      }
      row.world_spl.emplace_back(
          worlds[w].name, spl(std::span<const Episode>(row.episodes).subspan(first, world_pairs[w].size())));
    }
    for (const Episode& e : row.episodes) {
      switch (e.outcome) {
        case Outcome::success: ++row.success; break;
        case Outcome::collision: ++row.collision; break;
        case Outcome::timeout: ++row.timeout; break;
        case Outcome::feared_stop: ++row.feared_stop; break;
      }
      lat.insert(lat.end(), e.latency_ms.begin(), e.latency_ms.end());
    }
    row.spl = spl(row.episodes);
    if (!lat.empty()) {
      for (double v : lat) row.latency_mean_ms += v;
      row.latency_mean_ms /= static_cast<double>(lat.size());
      for (double v : lat) row.latency_std_ms += (v - row.latency_mean_ms) * (v - row.latency_mean_ms);
      row.latency_std_ms = std::sqrt(row.latency_std_ms / static_cast<double>(lat.size()));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

json summary_json(const BenchmarkReport& report) {
  json rows = json::array();
  for (const NoiseRow& r : report.rows) {
    json per_world = json::object();
    for (const auto& [name, v] : r.world_spl) per_world[name] = v;
    rows.push_back({{"sigma", r.sigma},
                    {"spl", r.spl},
                    {"episodes", r.episodes.size()},
                    {"world_spl", per_world},
                    {"outcomes",
                     {{"success", r.success},
                      {"collision", r.collision},
                      {"timeout", r.timeout},
                      {"feared-stop", r.feared_stop}}}});
  }
  return json{{"version", 1}, {"rows", rows}};
}

void write_report_csv(const BenchmarkReport& report, std::ostream& out) {
  out << "sigma,world,pair,outcome,steps,executed_length,oracle_length,start_x,start_y,start_z,heading,goal_x,"
         "goal_y,goal_z\n";
  out.precision(17);
  for (const NoiseRow& r : report.rows) {
    std::map<std::string, std::size_t> index;
    for (const Episode& e : r.episodes) {
      out << r.sigma << ',' << e.world << ',' << index[e.world]++ << ',' << to_string(e.outcome) << ','
          << e.steps << ',' << e.executed_length << ',';
      if (e.oracle_length) out << *e.oracle_length;
      out << ',' << e.start.position[0] << ',' << e.start.position[1] << ',' << e.start.position[2] << ','
          << e.start.heading << ',' << e.goal[0] << ',' << e.goal[1] << ',' << e.goal[2] << '\n';
    }
  }
}

void write_report(const BenchmarkReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "report.csv");
    write_report_csv(report, csv);
    if (!csv) throw std::runtime_error("write failed: report.csv");
  }
  {
    std::ofstream js(dir / "summary.json");
    js << summary_json(report).dump(2) << '\n';
    if (!js) throw std::runtime_error("write failed: summary.json");
  }
  json lat = json::array();
  for (const NoiseRow& r : report.rows)
    lat.push_back({{"sigma", r.sigma}, {"mean_ms", r.latency_mean_ms}, {"std_ms", r.latency_std_ms}});
  std::ofstream js(dir / "latency.json");
  js << json{{"rows", lat}}.dump(2) << '\n';
  if (!js) throw std::runtime_error("write failed: latency.json");
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("sigma,world,pair,outcome", 0) != 0)
    throw std::runtime_error("report.csv: missing header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 14) throw std::runtime_error("report.csv: expected 14 fields, got " + std::to_string(f.size()));
    ReportRow r;
    r.sigma = std::stod(f[0]);
    r.world = f[1];
    r.pair = std::stoul(f[2]);
    r.outcome = parse_outcome(f[3]);
    r.steps = std::stoul(f[4]);
    r.executed_length = std::stod(f[5]);
    if (!f[6].empty()) r.oracle_length = std::stod(f[6]);
    r.start = {std::stod(f[7]), std::stod(f[8]), std::stod(f[9])};
    r.heading = std::stod(f[10]);
    r.goal = {std::stod(f[11]), std::stod(f[12]), std::stod(f[13])};
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Scenarios

Scenario scenario_from_json(const json& doc) {
  const auto layout = doc.at("layout").get<std::vector<std::string>>();
  if (layout.empty()) throw std::invalid_argument("scenario: empty layout");
  const double cs = doc.value("cell_size", 0.1);
  const int h = static_cast<int>(layout.size());
  const int w = static_cast<int>(layout.front().size());
  const GridShape shape{2, {w, h, 1}};
  std::vector<std::uint8_t> occ(shape.count());
  for (int row = 0; row < h; ++row) {
    if (static_cast<int>(layout[row].size()) != w) throw std::invalid_argument("scenario: ragged layout");
    for (int x = 0; x < w; ++x) {
      const char ch = layout[row][x];
      if (ch != '#' && ch != '.') throw std::invalid_argument(std::string("scenario: bad layout char '") + ch + "'");
      occ[shape.index({x, h - 1 - row, 0})] = ch == '#';
    }
  }
  Scenario s{doc.value("name", std::string("scenario")),
             WorldModel(shape, cs, std::move(occ), doc.value("seed", std::uint64_t{0})),
             {},
             {},
             {},
             {}};
  const json& st = doc.at("start");
  s.start.position = position_from_json(st.at("position"));
  s.start.heading = st.value("heading", 0.0);
  s.start.radius = st.value("radius", 0.2);
  s.goal = position_from_json(doc.at("goal"));
  if (doc.contains("moving"))
    for (const json& m : doc.at("moving"))
      s.moving.push_back({position_from_json(m.at("start")), position_from_json(m.at("velocity")),
                          m.value("radius", 0.3)});
  if (doc.contains("expect"))
    for (const json& o : doc.at("expect")) s.expect.push_back(parse_outcome(o.get<std::string>()));
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path.string());
  return scenario_from_json(json::parse(in));
}

}  // namespace iplan
