// iplan: world generation, cost maps, training, evaluation and single-shot
// planning from one binary. Every command writes into a fresh --out directory
// together with a manifest.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iplan/checkpoint.hpp"
#include "iplan/costmap.hpp"
#include "iplan/evalharness.hpp"
#include "iplan/policy.hpp"
#include "iplan/spline.hpp"
#include "iplan/trainer.hpp"
#include "iplan/world.hpp"

#ifndef IPLAN_VERSION
#define IPLAN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iplan;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Manifest {
 public:
  Manifest(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    if (fs::exists(out_ / "manifest.json"))
      throw UsageError("output directory " + out_.string() + " already holds a run; pick a new --out");
  }
  json& config() { return config_; }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void artifact(const fs::path& p) { artifacts_.push_back(fs::relative(p, out_).generic_string()); }

  void write() const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    const json doc{{"command", command_}, {"config", config_},       {"seeds", seeds_},
                   {"artifacts", artifacts_}, {"tool_version", IPLAN_VERSION}, {"wall_time", wall}};
    std::ofstream f(out_ / "manifest.json");
    f << doc.dump(2) << '\n';
    if (!f) throw std::runtime_error("cannot write manifest.json");
  }

  const fs::path& out() const { return out_; }

 private:
  std::string command_;
  fs::path out_;
  json config_ = json::object();
  json seeds_ = json::object();
  std::vector<std::string> artifacts_;
  std::chrono::steady_clock::time_point started_ = std::chrono::steady_clock::now();
};

std::vector<double> parse_numbers(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size() || cell.empty()) throw UsageError(std::string("bad number in --") + what + ": " + text);
    out.push_back(v);
  }
  return out;
}

Position parse_position(const std::string& text, const char* what, double* heading = nullptr) {
  const auto v = parse_numbers(text, what);
  if (v.size() < 2 || v.size() > 3) throw UsageError(std::string("--") + what + " expects x,y" +
                                                       (heading ? "[,heading]" : "[,z]"));
  Position p{v[0], v[1], 0.0};
  if (v.size() == 3) {
    if (heading)
      *heading = v[2];
    else
      p[2] = v[2];
  }
  return p;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw std::runtime_error(std::string(what) + " not found: " + p.string());
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string family = "rooms";
  std::uint64_t seed = 0;
  std::string size = "96x96";
  double cell_size = 0.1;
  double density = 1.0;
  fs::path out;
};

int cmd_gen(const GenArgs& a) {
  WorldGenConfig cfg;
  const auto dims = parse_numbers([&] {
    std::string s = a.size;
    for (char& c : s) if (c == 'x') c = ',';
    return s;
  }(), "size");
  if (dims.size() < 2 || dims.size() > 3) throw UsageError("--size expects WxH or WxHxD");
  cfg.dims = static_cast<int>(dims.size());
  cfg.cells = {1, 1, 1};
  for (std::size_t i = 0; i < dims.size(); ++i) cfg.cells[i] = static_cast<int>(dims[i]);
  cfg.cell_size = a.cell_size;
  cfg.density = a.density;
  const WorldFamily family = parse_world_family(a.family);

  Manifest m("gen", a.out);
  const WorldModel world = generate_world(family, a.seed, cfg);
  fs::create_directories(a.out);
  save_world(world, a.out / "world.json");
  m.artifact(a.out / "world.json");
  m.config() = {{"family", to_string(family)}, {"size", a.size}, {"cell_size", a.cell_size}, {"density", a.density}};
  m.seed("world", a.seed);
  m.write();
  std::cout << "world " << to_string(family) << " seed " << a.seed << ": " << world.free_count()
            << " free cells -> " << (a.out / "world.json").string() << '\n';
  return 0;
}

struct CostmapArgs {
  fs::path world;
  double sigma = 2.0;
  double oob_slope = 1.0;
  fs::path out;
};

int cmd_costmap(const CostmapArgs& a) {
  require_file(a.world, "world file");
  Manifest m("costmap", a.out);
  const WorldModel world = load_world(a.world);
  const CostMap map = build_costmap(world, a.sigma, a.oob_slope);
  fs::create_directories(a.out);
  save_costmap(map, a.out / "costmap");
  for (const char* ext : {".json", ".f32", ".pgm"}) m.artifact(a.out / (std::string("costmap") + ext));
  m.config() = {{"world", fs::absolute(a.world).string()}, {"sigma", a.sigma}, {"oob_slope", a.oob_slope}};
  m.seed("world", world.seed());
  m.write();
  std::cout << "cost map max " << map.max_value() << " -> " << (a.out / "costmap.json").string() << '\n';
  return 0;
}

struct TrainArgs {
  fs::path config;
  fs::path out;
  fs::path resume;
  std::size_t epochs = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  require_file(a.config, "config");
  TrainConfig cfg = load_train_config(a.config);
  if (a.epochs) cfg.epochs = a.epochs;
  if (!a.resume.empty()) require_file(a.resume, "checkpoint");
  Manifest m("train", a.out);
  FitOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) opts.resume = a.resume;
  if (!a.quiet)
    opts.on_epoch = [](const json& line) {
      std::printf("epoch %3zu  f %.4f  c_obs %.4f  c_goal %.4f  c_motion %.4f  fear_acc %.3f  t %.1fs\n",
                  line["epoch"].get<std::size_t>(), line["f_total"].get<double>(), line["c_obs"].get<double>(),
                  line["c_goal"].get<double>(), line["c_motion"].get<double>(),
                  line["fear_accuracy"].get<double>(), line["wall_time"].get<double>());
      std::fflush(stdout);
    };
  const FitResult r = fit(cfg, opts);
  m.config() = to_json(cfg);
  if (!a.resume.empty()) m.config()["resume"] = fs::absolute(a.resume).string();
  m.seed("train", cfg.seed);
  m.artifact(a.out / "train_log.jsonl");
  for (const auto& p : r.checkpoints) m.artifact(p);
  m.write();
  return 0;
}

struct EvalArgs {
  fs::path checkpoint;
  std::vector<fs::path> worlds;
  fs::path scenario;
  std::size_t pairs = 30;
  std::vector<double> noise{0.0};
  std::uint64_t seed = 0;
  double min_distance = 2.0;
  double max_distance = 6.0;
  fs::path rollout_config;
  fs::path out;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  for (const auto& w : a.worlds) require_file(w, "world file");
  if (!a.scenario.empty()) require_file(a.scenario, "scenario");
  if (a.worlds.empty() && a.scenario.empty()) throw UsageError("eval needs --worlds or --scenario");
  RolloutConfig rc;
  if (!a.rollout_config.empty()) {
    require_file(a.rollout_config, "rollout config");
    std::ifstream in(a.rollout_config);
    rc = rollout_config_from_json(json::parse(in));
  }
  // Everything is loaded before the output directory is touched.
  const PolicyParams params = policy_from_checkpoint(ad::read_checkpoint(a.checkpoint));
  std::vector<NamedWorld> worlds;
  for (const auto& w : a.worlds) worlds.push_back({w.stem().string() == "world" ? w.parent_path().filename().string()
                                                                                : w.stem().string(),
                                                   load_world(w)});
  std::optional<Scenario> scenario;
  if (!a.scenario.empty()) scenario = load_scenario(a.scenario);

  Manifest m("eval", a.out);
  m.config() = {{"checkpoint", fs::absolute(a.checkpoint).string()},
                {"pairs", a.pairs},
                {"noise", a.noise},
                {"min_distance", a.min_distance},
                {"max_distance", a.max_distance},
                {"rollout", to_json(rc)}};
  m.seed("eval", a.seed);
  if (!worlds.empty()) {
    PairSampling ps;
    ps.min_distance = a.min_distance;
    ps.max_distance = a.max_distance;
    const BenchmarkReport report = benchmark(params, worlds, a.pairs, a.noise, rc, ps, a.seed);
    write_report(report, a.out);
    for (const char* f : {"report.csv", "summary.json", "latency.json"}) m.artifact(a.out / f);
    for (const NoiseRow& r : report.rows)
      std::printf("sigma %.3f  SPL %.4f  success %zu  collision %zu  timeout %zu  feared-stop %zu  latency %.3f ms\n",
                  r.sigma, r.spl, r.success, r.collision, r.timeout, r.feared_stop, r.latency_mean_ms);
  }
  if (scenario) {
    RolloutConfig src = rc;
    src.moving = scenario->moving;
    const Episode ep = rollout(params, scenario->world, scenario->name, scenario->start, scenario->goal, src, {});
    fs::create_directories(a.out);
    json path = json::array();
    for (const Position& p : ep.path) path.push_back({p[0], p[1]});
    const bool expected = scenario->expect.empty() ||
                          std::find(scenario->expect.begin(), scenario->expect.end(), ep.outcome) !=
                              scenario->expect.end();
    std::ofstream f(a.out / "scenario.json");
    f << json{{"scenario", scenario->name}, {"outcome", to_string(ep.outcome)}, {"expected", expected},
              {"steps", ep.steps},           {"executed_length", ep.executed_length}, {"path", path}}
             .dump(2)
      << '\n';
    m.artifact(a.out / "scenario.json");
    std::printf("scenario %s: %s%s\n", scenario->name.c_str(), to_string(ep.outcome).c_str(),
                expected ? "" : " (unexpected)");
  }
  m.write();
  return 0;
}

struct PlanArgs {
  fs::path checkpoint;
  fs::path world;
  std::string start;
  std::string goal;
  fs::path out;
  bool render = false;
  int pixels_per_cell = 4;
};

void render_ppm(const fs::path& path, const WorldModel& world, const CostMap& map, const Trajectory& traj,
                const RobotState& pose, const KeyPointPath& keys, const Position& goal,
                const std::vector<Position>& executed, int ppc) {
  const int w = world.shape().size[0], h = world.shape().size[1];
  const int W = w * ppc, H = h * ppc;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(W) * H * 3);
  const double peak = std::max(map.max_value(), 1e-12);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool occ = world.occupied({x, y, 0});
      const auto g = occ ? std::uint8_t{0} : static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - map.at({x, y, 0}) / peak)));
      for (int py = 0; py < ppc; ++py)
        for (int px = 0; px < ppc; ++px) {
          const std::size_t i = (static_cast<std::size_t>(H - 1 - (y * ppc + py)) * W + x * ppc + px) * 3;
          img[i] = img[i + 1] = img[i + 2] = occ ? 0 : std::max<std::uint8_t>(g, 60);
        }
    }
  const Bounds b = world.bounds();
  const auto dot = [&](const Position& p, int radius, std::array<std::uint8_t, 3> rgb) {
    const int cx = static_cast<int>(std::floor((p[0] - b.lo[0]) / world.cell_size() * ppc));
    const int cy = static_cast<int>(std::floor((p[1] - b.lo[1]) / world.cell_size() * ppc));
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= W || y >= H || dx * dx + dy * dy > radius * radius) continue;
        const std::size_t i = (static_cast<std::size_t>(H - 1 - y) * W + x) * 3;
        img[i] = rgb[0];
        img[i + 1] = rgb[1];
        img[i + 2] = rgb[2];
      }
  };
  for (const Position& p : executed) dot(p, 1, {40, 90, 220});
  for (const Position& p : traj.points) dot(to_world(pose, p), 1, {220, 30, 30});
  for (const Position& k : keys.points) dot(to_world(pose, k), 3, {30, 200, 60});
  dot(goal, 4, {255, 150, 0});
  std::ofstream f(path, std::ios::binary);
  f << "P6\n" << W << ' ' << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

int cmd_plan(const PlanArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.world, "world file");
  RobotState start;
  start.position = parse_position(a.start, "start", &start.heading);
  const Position goal = parse_position(a.goal, "goal");
  const PolicyParams params = policy_from_checkpoint(ad::read_checkpoint(a.checkpoint));
  const WorldModel world = load_world(a.world);
  if (!world.inside(start.position) || collides(world, start.position, start.radius))
    throw std::runtime_error("start is not in free space");

  Manifest m("plan", a.out);
  fs::create_directories(a.out);
  RolloutConfig rc;
  const RangeObservation obs = render_scan(world, start, params.config.rays, rc.fov, params.config.max_range);
  ad::Tape tape;
  const PolicyOutput out = forward(tape, params, obs, to_robot(start, goal));
  const KeyPointPath keys = to_keypoint_path(out.keypoints, params.config.dims);
  const Trajectory traj = interpolate(keys, rc.per_segment);
  const double mu = 1.0 / (1.0 + std::exp(-out.fear_logit.item()));
  {
    std::ofstream f(a.out / "trajectory.csv");
    Trajectory world_traj = traj;
    for (Position& p : world_traj.points) p = to_world(start, p);
    write_trajectory_csv(world_traj, f);
  }
  m.artifact(a.out / "trajectory.csv");

  const Episode ep = rollout(params, world, a.world.stem().string(), start, goal, rc, {});
  {
    std::ofstream f(a.out / "executed.csv");
    f << "index,x,y\n";
    f.precision(17);
    for (std::size_t i = 0; i < ep.path.size(); ++i) f << i << ',' << ep.path[i][0] << ',' << ep.path[i][1] << '\n';
  }
  m.artifact(a.out / "executed.csv");
  if (a.render) {
    const CostMap map = build_costmap(world);
    render_ppm(a.out / "plan.ppm", world, map, traj, start, keys, goal, ep.path, a.pixels_per_cell);
    m.artifact(a.out / "plan.ppm");
  }
  m.config() = {{"checkpoint", fs::absolute(a.checkpoint).string()},
                {"world", fs::absolute(a.world).string()},
                {"start", a.start},
                {"goal", a.goal},
                {"rollout", to_json(rc)}};
  m.write();
  std::printf("fear %.3f  outcome %s  executed %.3f m in %zu steps\n", mu, to_string(ep.outcome).c_str(),
              ep.executed_length, ep.steps);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  iplan::retain_heap_memory();
  CLI::App app{"Learned local planner with a differentiable spline/cost-map objective"};
  app.require_subcommand(1);
  app.set_version_flag("--version", IPLAN_VERSION);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a procedural world");
  g->add_option("--family", gen.family, "rooms, corridors or forest-scatter")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--size", gen.size, "Cells, e.g. 96x96 or 48x48x24")->capture_default_str();
  g->add_option("--cell-size", gen.cell_size)->capture_default_str();
  g->add_option("--density", gen.density)->capture_default_str();
  g->add_option("--out", gen.out)->required();

  CostmapArgs cm;
  auto* c = app.add_subcommand("costmap", "Build the smoothed cost map of a world");
  c->add_option("--world", cm.world)->required();
  c->add_option("--sigma", cm.sigma, "Gaussian width in cells")->capture_default_str();
  c->add_option("--oob-slope", cm.oob_slope)->capture_default_str();
  c->add_option("--out", cm.out)->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a policy");
  t->add_option("--config", tr.config)->required();
  t->add_option("--out", tr.out)->required();
  t->add_option("--resume", tr.resume, "Continue from a training checkpoint");
  t->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  t->add_flag("--quiet", tr.quiet);

  EvalArgs ev;
  std::string noise = "0";
  auto* e = app.add_subcommand("eval", "Closed-loop benchmark");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--worlds", ev.worlds);
  e->add_option("--scenario", ev.scenario);
  e->add_option("--pairs", ev.pairs)->capture_default_str();
  e->add_option("--noise", noise, "Comma-separated localisation noise levels (m)")->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--min-distance", ev.min_distance)->capture_default_str();
  e->add_option("--max-distance", ev.max_distance)->capture_default_str();
  e->add_option("--rollout-config", ev.rollout_config);
  e->add_option("--out", ev.out)->required();

  PlanArgs pl;
  auto* p = app.add_subcommand("plan", "Plan once and execute to the goal");
  p->add_option("--checkpoint", pl.checkpoint)->required();
  p->add_option("--world", pl.world)->required();
  p->add_option("--start", pl.start, "x,y[,heading]")->required();
  p->add_option("--goal", pl.goal, "x,y")->required();
  p->add_option("--out", pl.out)->required();
  p->add_flag("--render", pl.render, "Write plan.ppm");
  p->add_option("--pixels-per-cell", pl.pixels_per_cell)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*c) return cmd_costmap(cm);
    if (*t) return cmd_train(tr);
    if (*e) {
      ev.noise = parse_numbers(noise, "noise");
      return cmd_eval(ev);
    }
    if (*p) return cmd_plan(pl);
  } catch (const UsageError& err) {
    std::cerr << "iplan: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "iplan: error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
