#include "iplan/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "iplan/checkpoint.hpp"
#include "iplan/spline.hpp"

namespace iplan {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxTries = 1000;

json position_json(const Position& p, int dims) {
  json a = json::array();
  for (int i = 0; i < dims; ++i) a.push_back(p[i]);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

json to_json(const WorldSource& src) {
  json doc = json::object();
  if (!src.files.empty()) {
    json files = json::array();
    for (const auto& f : src.files) files.push_back({{"world", f.world.string()}, {"costmap", f.costmap.string()}});
    doc["files"] = files;
  }
  if (!src.seeds.empty()) {
    json fams = json::array();
    for (WorldFamily f : src.families) fams.push_back(to_string(f));
    json cells = json::array();
    for (int a = 0; a < src.gen.dims; ++a) cells.push_back(src.gen.cells[a]);
    doc["generate"] = {{"families", fams},
                       {"seeds", src.seeds},
                       {"dims", src.gen.dims},
                       {"cells", cells},
                       {"cell_size", src.gen.cell_size},
                       {"density", src.gen.density},
                       {"clearance_radius", src.gen.clearance_radius},
                       {"sigma", src.sigma},
                       {"inflation", src.inflation}};
  }
  return doc;
}

WorldSource world_source_from_json(const json& doc) {
  WorldSource src;
  if (doc.contains("files"))
    for (const json& f : doc.at("files"))
      src.files.push_back({f.at("world").get<std::string>(), f.at("costmap").get<std::string>()});
  if (doc.contains("generate")) {
    const json& g = doc.at("generate");
    for (const json& f : g.at("families")) src.families.push_back(parse_world_family(f.get<std::string>()));
    src.seeds = g.at("seeds").get<std::vector<std::uint64_t>>();
    src.gen.dims = g.value("dims", src.gen.dims);
    if (g.contains("cells")) {
      const auto cells = g.at("cells").get<std::vector<int>>();
      if (cells.size() != static_cast<std::size_t>(src.gen.dims))
        throw std::invalid_argument("world source: cells must have one entry per dimension");
      src.gen.cells = {1, 1, 1};
      for (std::size_t a = 0; a < cells.size(); ++a) src.gen.cells[a] = cells[a];
    }
    src.gen.cell_size = g.value("cell_size", src.gen.cell_size);
    src.gen.density = g.value("density", src.gen.density);
    src.gen.clearance_radius = g.value("clearance_radius", src.gen.clearance_radius);
    src.sigma = g.value("sigma", src.sigma);
    src.inflation = g.value("inflation", src.inflation);
    if (src.families.empty()) throw std::invalid_argument("world source: generate needs at least one family");
  }
  if (src.files.empty() && src.seeds.empty()) throw std::invalid_argument("world source: no worlds listed");
  return src;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be positive");
  if (batch_size == 0 || steps_per_epoch == 0) throw std::invalid_argument("train config: empty batches");
  if (checkpoint_every == 0) throw std::invalid_argument("train config: checkpoint_every must be positive");
  if (per_segment == 0) throw std::invalid_argument("train config: per_segment must be positive");
  if (!(robot_radius > 0.0)) throw std::invalid_argument("train config: robot_radius must be positive");
  if (!(goals.min_distance >= 0.0) || !(goals.max_distance >= goals.min_distance))
    throw std::invalid_argument("train config: goal distance band is empty");
  weights.validate();
  policy.validate();
}

json to_json(const TrainConfig& c) {
  return json{{"train_worlds", to_json(c.train)},
              {"validation_worlds", to_json(c.validation)},
              {"epochs", c.epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"optimizer", c.optimizer == ad::OptimizerMode::adam ? "adam" : "plain"},
              {"seed", c.seed},
              {"weights", to_json(c.weights)},
              {"policy", to_json(c.policy)},
              {"per_segment", c.per_segment},
              {"fov", c.fov},
              {"robot_radius", c.robot_radius},
              {"goals",
               {{"min_distance", c.goals.min_distance},
                {"max_distance", c.goals.max_distance},
                {"require_reachable", c.goals.require_reachable},
                {"max_bearing", c.goals.max_bearing}}},
              {"checkpoint_every", c.checkpoint_every},
              {"validation_samples", c.validation_samples}};
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig c;
  c.train = world_source_from_json(doc.at("train_worlds"));
  c.validation = world_source_from_json(doc.at("validation_worlds"));
  c.epochs = doc.value("epochs", c.epochs);
  c.steps_per_epoch = doc.value("steps_per_epoch", c.steps_per_epoch);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  const std::string mode = doc.value("optimizer", std::string("adam"));
  if (mode == "adam")
    c.optimizer = ad::OptimizerMode::adam;
  else if (mode == "plain")
    c.optimizer = ad::OptimizerMode::plain;
  else
    throw std::invalid_argument("train config: unknown optimizer '" + mode + "'");
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("weights")) c.weights = cost_weights_from_json(doc.at("weights"));
  if (doc.contains("policy")) c.policy = policy_config_from_json(doc.at("policy"));
  c.per_segment = doc.value("per_segment", c.per_segment);
  c.fov = doc.value("fov", c.fov);
  c.robot_radius = doc.value("robot_radius", c.robot_radius);
  if (doc.contains("goals")) {
    const json& g = doc.at("goals");
    c.goals.min_distance = g.value("min_distance", c.goals.min_distance);
    c.goals.max_distance = g.value("max_distance", c.goals.max_distance);
    c.goals.require_reachable = g.value("require_reachable", c.goals.require_reachable);
    c.goals.max_bearing = g.value("max_bearing", c.goals.max_bearing);
  }
  c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
  c.validation_samples = doc.value("validation_samples", c.validation_samples);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  TrainConfig c = train_config_from_json(json::parse(in));
  const auto base = path.parent_path();
  for (WorldSource* src : {&c.train, &c.validation})
    for (auto& f : src->files) {
      if (f.world.is_relative()) f.world = base / f.world;
      if (f.costmap.is_relative()) f.costmap = base / f.costmap;
    }
  return c;
}

// ---------------------------------------------------------------------------
// Worlds

SceneWorld::SceneWorld(std::string name, WorldModel world, CostMap map, double robot_radius)
    : name_(std::move(name)), world_(std::move(world)), map_(std::move(map)), reach_(world_, robot_radius) {
  if (!(map_.shape() == world_.shape()) || map_.cell_size() != world_.cell_size())
    throw std::invalid_argument("world '" + name_ + "': cost map geometry differs from the world");
  const Position c0 = world_.cell_center({0, 0, 0});
  for (int a = 0; a < world_.dims(); ++a)
    if (std::abs(map_.origin()[a] - c0[a]) > 1e-9 * world_.cell_size())
      throw std::invalid_argument("world '" + name_ + "': cost map origin differs from the world");
}

WorldSet load_world_set(const WorldSource& src, double robot_radius) {
  WorldSet set;
  for (const auto& f : src.files) {
    WorldModel world = load_world(f.world);
    CostMap map = load_costmap(f.costmap).normalized();
    set.push_back(std::make_unique<SceneWorld>(f.world.stem().string(), std::move(world), std::move(map),
                                               robot_radius));
  }
  for (std::size_t i = 0; i < src.seeds.size(); ++i) {
    const WorldFamily family = src.families[i % src.families.size()];
    WorldModel world = generate_world(family, src.seeds[i], src.gen);
    CostMap map = build_costmap(world, src.sigma, 1.0, src.inflation).normalized();
    set.push_back(std::make_unique<SceneWorld>(to_string(family) + "-" + std::to_string(src.seeds[i]),
                                               std::move(world), std::move(map), robot_radius));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Sampling

json scene_descriptor(const TrainSample& s, const WorldSet& worlds) {
  const int d = worlds[s.world]->world().dims();
  return json{{"world", worlds[s.world]->name()},
              {"position", position_json(s.pose.position, d)},
              {"heading", s.pose.heading},
              {"radius", s.pose.radius},
              {"goal_world", position_json(s.goal_world, d)},
              {"goal_robot", position_json(s.goal_robot, d)}};
}

namespace {

Position uniform_position(const WorldModel& world, Rng& rng) {
  const Bounds b = world.bounds();
  Position p{};
  for (int a = 0; a < world.dims(); ++a) p[a] = rng.uniform(b.lo[a], b.hi[a]);
  return p;
}

bool pose_ok(const SceneWorld& w, const Position& p, double radius) {
  return w.reach().feasible(p) && !collides(w.world(), p, radius);
}

}  // namespace

std::vector<TrainSample> sample_batch(const WorldSet& worlds, const TrainConfig& config, Rng& rng,
                                      std::size_t count) {
  if (worlds.empty()) throw std::invalid_argument("sample_batch: no worlds");
  std::vector<TrainSample> batch;
  batch.reserve(count);
  const GoalSampling& g = config.goals;
  for (std::size_t k = 0; k < count; ++k) {
    TrainSample s;
    s.world = rng.index(worlds.size());
    const SceneWorld& w = *worlds[s.world];
    // Fix the distance first so its marginal stays uniform under rejection.
    const double dist = rng.uniform(g.min_distance, g.max_distance);
    bool found = false;
    for (std::size_t tries = 0; tries < kMaxTries && !found; ++tries) {
      const Position p = uniform_position(w.world(), rng);
      const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double bearing = rng.uniform(-g.max_bearing, g.max_bearing);
      if (!pose_ok(w, p, config.robot_radius)) continue;
      Position goal = p;
      goal[0] += dist * std::cos(heading + bearing);
      goal[1] += dist * std::sin(heading + bearing);
      if (!pose_ok(w, goal, config.robot_radius)) continue;
      if (g.require_reachable && !w.reach().connected(p, goal)) continue;
      s.pose = RobotState{p, heading, config.robot_radius};
      s.goal_world = goal;
      s.goal_robot = to_robot(s.pose, goal);
      found = true;
    }
    if (!found)
      throw std::runtime_error("sample_batch: no valid pose/goal in world '" + w.name() + "' after " +
                               std::to_string(kMaxTries) + " tries");
    s.obs = render_scan(w.world(), s.pose, config.policy.rays, config.fov, config.policy.max_range);
    batch.push_back(std::move(s));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Steps

namespace {

bool trajectory_collides(const ad::Tensor& traj, const RobotState& pose, const WorldModel& world,
                         double radius) {
  const std::size_t d = traj.shape()[1];
  const auto v = traj.values();
  std::vector<Position> pts(traj.shape()[0]);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Position local{};
    for (std::size_t a = 0; a < d; ++a) local[a] = v[i * d + a];
    pts[i] = to_world(pose, local);
  }
  return collides(world, pts, radius);
}

struct Evaluated {
  LossTerms terms;
  bool label;
  double fear_logit;
};

Evaluated evaluate(ad::Tape& tape, const PolicyParams& params, std::span<const ad::Tensor> bound,
                   const TrainSample& s, const WorldSet& worlds, const TrainConfig& config) {
  const SceneWorld& w = *worlds.at(s.world);
  const PolicyOutput out = forward(tape, params, bound, s.obs, s.goal_robot);
  const ad::Tensor traj = interpolate(out.keypoints, config.per_segment);
  // Ground-truth label from occupancy; it enters the loss as a constant.
  const bool label = trajectory_collides(traj, s.pose, w.world(), config.robot_radius);
  Evaluated e{total_loss(traj, params.config.keypoints, s.goal_robot, s.pose, w.map(), config.weights,
                         out.fear_logit, label),
              label, out.fear_logit.item()};
  if (!std::isfinite(e.terms.f_total.item()))
    throw NonFiniteLoss("non-finite loss in world '" + w.name() + "'", scene_descriptor(s, worlds));
  return e;
}

void add_into(LossBreakdown& acc, const LossBreakdown& b) {
  acc.c_obs += b.c_obs;
  acc.c_goal += b.c_goal;
  acc.c_motion += b.c_motion;
  acc.c_total += b.c_total;
  acc.fear_loss += b.fear_loss;
  acc.f_total += b.f_total;
}

void divide(LossBreakdown& acc, double n) {
  acc.c_obs /= n;
  acc.c_goal /= n;
  acc.c_motion /= n;
  acc.c_total /= n;
  acc.fear_loss /= n;
  acc.f_total /= n;
}

}  // namespace

SampleResult sample_gradient(const PolicyParams& params, const TrainSample& sample, const WorldSet& worlds,
                             const TrainConfig& config) {
  ad::Tape tape;
  tape.reserve(96);
  const auto bound = bind(tape, params, true);
  const Evaluated e = evaluate(tape, params, bound, sample, worlds, config);
  tape.backward(e.terms.f_total);
  SampleResult r{e.terms.breakdown(e.label), {}};
  r.grads.reserve(bound.size());
  for (const ad::Tensor& b : bound) {
    const auto g = tape.grad(b);
    r.grads.emplace_back(g.begin(), g.end());
  }
  return r;
}

LossBreakdown sample_loss(const PolicyParams& params, const TrainSample& sample, const WorldSet& worlds,
                          const TrainConfig& config) {
  ad::Tape tape;
  const auto bound = bind(tape, params, false);
  const Evaluated e = evaluate(tape, params, bound, sample, worlds, config);
  return e.terms.breakdown(e.label);
}

StepResult batch_gradient(const PolicyParams& params, std::span<const TrainSample> batch,
                          const WorldSet& worlds, const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  StepResult r;
  r.grads.resize(params.blocks.size());
  for (std::size_t i = 0; i < params.blocks.size(); ++i) r.grads[i].assign(params.blocks[i].values.size(), 0.0);
  for (const TrainSample& s : batch) {
    const SampleResult one = sample_gradient(params, s, worlds, config);
    add_into(r.mean, one.loss);
    for (std::size_t i = 0; i < r.grads.size(); ++i)
      for (std::size_t j = 0; j < r.grads[i].size(); ++j) r.grads[i][j] += one.grads[i][j];
  }
  const double n = static_cast<double>(batch.size());
  divide(r.mean, n);
  double sq = 0.0;
  for (auto& g : r.grads)
    for (double& v : g) {
      v /= n;
      sq += v * v;
    }
  r.grad_norm = std::sqrt(sq);
  return r;
}

StepResult train_step(PolicyParams& params, std::span<const TrainSample> batch, const WorldSet& worlds,
                      const TrainConfig& config, ad::OptimizerState& opt) {
  StepResult r = batch_gradient(params, batch, worlds, config);
  ad::step(params.blocks, r.grads, opt);
  return r;
}

ValidationResult validate(const PolicyParams& params, std::span<const TrainSample> samples,
                          const WorldSet& worlds, const TrainConfig& config) {
  ValidationResult v;
  std::size_t correct = 0;
  for (const TrainSample& s : samples) {
    ad::Tape tape;
    const auto bound = bind(tape, params, false);
    const Evaluated e = evaluate(tape, params, bound, s, worlds, config);
    add_into(v.mean, e.terms.breakdown(e.label));
    // mu >= 0.5 iff logit >= 0.
    if ((e.fear_logit >= 0.0) == e.label) ++correct;
    ++v.samples;
  }
  if (v.samples) {
    divide(v.mean, static_cast<double>(v.samples));
    v.fear_accuracy = static_cast<double>(correct) / static_cast<double>(v.samples);
  }
  return v;
}

std::vector<TrainSample> validation_set(const WorldSet& worlds, const TrainConfig& config) {
  Rng rng(mix_seed(config.seed, 0x76616c6964ULL));
  return sample_batch(worlds, config, rng, config.validation_samples);
}

// ---------------------------------------------------------------------------
// Checkpoints and the fit loop

namespace {

constexpr const char* kFirstMoment = "adam.m/";
constexpr const char* kSecondMoment = "adam.v/";

json breakdown_fields(const LossBreakdown& b) {
  json j = to_json(b);
  j.erase("fear_label");
  return j;
}

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_epoch_%04zu.ckpt", epoch);
  return buf;
}

}  // namespace

ad::Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& config) {
  ad::Checkpoint ckpt = to_checkpoint(state.params);
  const auto& opt = state.optimizer;
  for (std::size_t i = 0; i < state.params.blocks.size(); ++i) {
    const ad::Parameter& p = state.params.blocks[i];
    if (i < opt.first_moment.size()) {
      ckpt.arrays.push_back({kFirstMoment + p.name, p.shape, opt.first_moment[i]});
      ckpt.arrays.push_back({kSecondMoment + p.name, p.shape, opt.second_moment[i]});
    }
  }
  ckpt.meta["optimizer"] = {{"mode", opt.mode == ad::OptimizerMode::adam ? "adam" : "plain"},
                            {"learning_rate", opt.learning_rate},
                            {"beta1", opt.beta1},
                            {"beta2", opt.beta2},
                            {"epsilon", opt.epsilon},
                            {"step", opt.step}};
  ckpt.meta["rng_state"] = state.rng_state;
  ckpt.meta["epoch"] = state.epoch;
  ckpt.meta["train_config"] = to_json(config);
  return ckpt;
}

TrainState train_state_from_checkpoint(const ad::Checkpoint& ckpt) {
  TrainState st;
  st.params = policy_from_checkpoint(ckpt);
  if (!ckpt.meta.contains("optimizer") || !ckpt.meta.contains("rng_state"))
    throw std::runtime_error("checkpoint: no training state (weights-only checkpoint?)");
  const json& o = ckpt.meta.at("optimizer");
  st.optimizer.mode = o.at("mode").get<std::string>() == "adam" ? ad::OptimizerMode::adam : ad::OptimizerMode::plain;
  st.optimizer.learning_rate = o.at("learning_rate").get<double>();
  st.optimizer.beta1 = o.at("beta1").get<double>();
  st.optimizer.beta2 = o.at("beta2").get<double>();
  st.optimizer.epsilon = o.at("epsilon").get<double>();
  st.optimizer.step = o.at("step").get<std::uint64_t>();
  for (const ad::Parameter& p : st.params.blocks) {
    if (!ckpt.contains(kFirstMoment + p.name)) break;
    st.optimizer.first_moment.push_back(ckpt.find(kFirstMoment + p.name).values);
    st.optimizer.second_moment.push_back(ckpt.find(kSecondMoment + p.name).values);
  }
  st.rng_state = ckpt.meta.at("rng_state").get<std::string>();
  st.epoch = ckpt.meta.at("epoch").get<std::size_t>();
  return st;
}

FitResult fit(const TrainConfig& config, const FitOptions& options) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };
  const WorldSet train = load_world_set(config.train, config.robot_radius);
  const WorldSet held_out = load_world_set(config.validation, config.robot_radius);
  const std::vector<TrainSample> val_samples = validation_set(held_out, config);

  FitResult result;
  TrainState& st = result.state;
  Rng rng(mix_seed(config.seed, 0x747261696eULL));
  if (options.resume) {
    st = train_state_from_checkpoint(ad::read_checkpoint(*options.resume));
    if (!(st.params.config == config.policy))
      throw std::invalid_argument("resume: checkpoint policy config differs from the training config");
    rng.set_state(st.rng_state);
  } else {
    st.params = init_policy(config.seed, config.policy);
    st.optimizer = ad::make_optimizer(st.params.blocks, config.learning_rate, config.optimizer);
    st.rng_state = rng.state();
  }

  std::filesystem::create_directories(options.out_dir);
  std::ofstream log(options.out_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (options.out_dir / "train_log.jsonl").string());

  const std::size_t last = std::min(options.stop_after.value_or(config.epochs), config.epochs);
  while (st.epoch < last) {
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      const auto batch = sample_batch(train, config, rng, config.batch_size);
      const StepResult r = train_step(st.params, batch, train, config, st.optimizer);
      json line = breakdown_fields(r.mean);
      line["kind"] = "train";
      line["epoch"] = st.epoch;
      line["step"] = st.optimizer.step;
      line["grad_norm"] = r.grad_norm;
      line["wall_time"] = elapsed();
      log << line.dump() << '\n';
    }
    ++st.epoch;
    st.rng_state = rng.state();

    const ValidationResult v = validate(st.params, val_samples, held_out, config);
    result.validation.push_back(v);
    json line = breakdown_fields(v.mean);
    line["kind"] = "validation";
    line["epoch"] = st.epoch;
    line["fear_accuracy"] = v.fear_accuracy;
    line["samples"] = v.samples;
    line["wall_time"] = elapsed();
    log << line.dump() << '\n';
    log.flush();
    if (!log) throw std::runtime_error("write failed: train_log.jsonl");
    if (options.on_epoch) options.on_epoch(line);

    if (st.epoch % config.checkpoint_every == 0 || st.epoch == last) {
      const auto path = options.out_dir / epoch_name(st.epoch);
      ad::write_checkpoint(path, to_checkpoint(st, config));
      result.checkpoints.push_back(path);
    }
  }
  const auto final_path = options.out_dir / "final.ckpt";
  ad::write_checkpoint(final_path, to_checkpoint(st, config));
  result.checkpoints.push_back(final_path);
  return result;
}

void retain_heap_memory() {
#if defined(__GLIBC__)
  constexpr int kQuarterGiB = 1 << 28;
  mallopt(M_MMAP_THRESHOLD, kQuarterGiB);
  mallopt(M_TRIM_THRESHOLD, kQuarterGiB);
#endif
}

}  // namespace iplan
