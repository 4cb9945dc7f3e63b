#include "iplan/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

#include "iplan/rng.hpp"

namespace iplan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_boundary(const GridShape& shape, const Cell& c) {
  for (int a = 0; a < shape.dims; ++a)
    if (c[a] == 0 || c[a] == shape.size[a] - 1) return true;
  return false;
}

}  // namespace

WorldModel::WorldModel(GridShape shape, double cell_size, std::vector<std::uint8_t> occupancy,
                       std::uint64_t seed, Position lo)
    : shape_(shape), cell_size_(cell_size), occupancy_(std::move(occupancy)), seed_(seed), lo_(lo) {
  if (shape_.dims != 2 && shape_.dims != 3)
    throw std::invalid_argument("WorldModel: dims must be 2 or 3");
  if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_))
    throw std::invalid_argument("WorldModel: cell_size must be positive");
  for (int a = 0; a < 3; ++a) {
    if (a < shape_.dims && shape_.size[a] < 3)
      throw std::invalid_argument("WorldModel: each used axis needs at least 3 cells");
    if (a >= shape_.dims && shape_.size[a] != 1)
      throw std::invalid_argument("WorldModel: unused axes must have size 1");
  }
  if (occupancy_.size() != shape_.count())
    throw std::invalid_argument("WorldModel: occupancy size does not match shape");
  bool any_free = false;
  for (std::size_t i = 0; i < occupancy_.size(); ++i) {
    occupancy_[i] = occupancy_[i] ? 1 : 0;
    const Cell c = shape_.cell(i);
    if (is_boundary(shape_, c) && !occupancy_[i])
      throw std::invalid_argument("WorldModel: boundary cells must be obstacles");
    any_free = any_free || !occupancy_[i];
  }
  if (!any_free) throw std::invalid_argument("WorldModel: no free cell");
}

Bounds WorldModel::bounds() const {
  Bounds b{lo_, lo_};
  for (int a = 0; a < shape_.dims; ++a) b.hi[a] = lo_[a] + shape_.size[a] * cell_size_;
  return b;
}

std::size_t WorldModel::free_count() const {
  return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), 0));
}

std::optional<Cell> WorldModel::cell_of(const Position& p) const {
  Cell c{0, 0, 0};
  for (int a = 0; a < shape_.dims; ++a) {
    const double u = (p[a] - lo_[a]) / cell_size_;
    if (!(u >= 0.0) || u >= shape_.size[a]) return std::nullopt;
    c[a] = std::min(static_cast<int>(std::floor(u)), shape_.size[a] - 1);
  }
  return c;
}

Position WorldModel::cell_center(const Cell& c) const {
  Position p{};
  for (int a = 0; a < shape_.dims; ++a) p[a] = lo_[a] + (c[a] + 0.5) * cell_size_;
  return p;
}

// ---------------------------------------------------------------------------
// Generation

std::string to_string(WorldFamily family) {
  switch (family) {
    case WorldFamily::rooms: return "rooms";
    case WorldFamily::corridors: return "corridors";
    case WorldFamily::forest_scatter: return "forest-scatter";
  }
  return "unknown";
}

WorldFamily parse_world_family(std::string_view name) {
  if (name == "rooms") return WorldFamily::rooms;
  if (name == "corridors") return WorldFamily::corridors;
  if (name == "forest-scatter" || name == "forest") return WorldFamily::forest_scatter;
  throw std::invalid_argument("unknown world family '" + std::string(name) + "'");
}

namespace {

// Planar layout painter; 3D worlds extrude the layout between floor and ceiling.
class Layout {
 public:
  Layout(int nx, int ny) : nx_(nx), ny_(ny), cells_(static_cast<std::size_t>(nx) * ny, 0) {}

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::uint8_t at(int x, int y) const { return cells_[static_cast<std::size_t>(y) * nx_ + x]; }

  void fill(int x0, int y0, int x1, int y1, std::uint8_t v = 1) {
    x0 = std::max(x0, 0), y0 = std::max(y0, 0);
    x1 = std::min(x1, nx_ - 1), y1 = std::min(y1, ny_ - 1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) cells_[static_cast<std::size_t>(y) * nx_ + x] = v;
  }
  void disc(double cx, double cy, double r) {
    const int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
    const int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
    for (int y = std::max(y0, 0); y <= std::min(y1, ny_ - 1); ++y)
      for (int x = std::max(x0, 0); x <= std::min(x1, nx_ - 1); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= r * r) cells_[static_cast<std::size_t>(y) * nx_ + x] = 1;
      }
  }
  void ring() {
    fill(0, 0, nx_ - 1, 0);
    fill(0, ny_ - 1, nx_ - 1, ny_ - 1);
    fill(0, 0, 0, ny_ - 1);
    fill(nx_ - 1, 0, nx_ - 1, ny_ - 1);
  }

 private:
  int nx_, ny_;
  std::vector<std::uint8_t> cells_;
};

int uniform_int(Rng& rng, int lo, int hi) {  // inclusive
  if (hi <= lo) return lo;
  return lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1)));
}

int scaled_count(double base, double density) {
  return std::max(0, static_cast<int>(std::lround(base * density)));
}

void paint_forest(Layout& map, Rng& rng, double density) {
  const double area = static_cast<double>(map.nx() - 2) * (map.ny() - 2);
  const int trees = scaled_count(area / 300.0, density);
  for (int i = 0; i < trees; ++i) {
    const double r = rng.uniform(1.5, 3.5);
    const double cx = rng.uniform(1.0, map.nx() - 1.0);
    const double cy = rng.uniform(1.0, map.ny() - 1.0);
    map.disc(cx, cy, r);
  }
}

void paint_rooms(Layout& map, Rng& rng, double density) {
  constexpr int kRoom = 30, kWall = 2, kDoor = 10;
  const int inner_x = map.nx() - 2, inner_y = map.ny() - 2;
  const int rx = std::max(1, static_cast<int>(std::lround(inner_x / double(kRoom))));
  const int ry = std::max(1, static_cast<int>(std::lround(inner_y / double(kRoom))));
  std::vector<int> xs, ys;  // room boundaries (exclusive upper)
  for (int i = 0; i <= rx; ++i) xs.push_back(1 + i * inner_x / rx);
  for (int j = 0; j <= ry; ++j) ys.push_back(1 + j * inner_y / ry);

  // Interior vertical walls, one door per room-to-room segment.
  for (int i = 1; i < rx; ++i) {
    const int x = xs[i] - kWall / 2;
    for (int j = 0; j < ry; ++j) {
      const int y0 = ys[j], y1 = ys[j + 1] - 1;
      map.fill(x, y0, x + kWall - 1, y1);
      const int span = y1 - y0 + 1 - kDoor;
      const int dy = y0 + uniform_int(rng, 2, std::max(2, span - 2));
      map.fill(x, dy, x + kWall - 1, dy + kDoor - 1, 0);
    }
  }
  for (int j = 1; j < ry; ++j) {
    const int y = ys[j] - kWall / 2;
    for (int i = 0; i < rx; ++i) {
      const int x0 = xs[i], x1 = xs[i + 1] - 1;
      map.fill(x0, y, x1, y + kWall - 1);
      const int span = x1 - x0 + 1 - kDoor;
      const int dx = x0 + uniform_int(rng, 2, std::max(2, span - 2));
      map.fill(dx, y, dx + kDoor - 1, y + kWall - 1, 0);
    }
  }
  // Furniture blocks away from the walls.
  for (int i = 0; i < rx; ++i)
    for (int j = 0; j < ry; ++j) {
      const int pieces = scaled_count(rng.uniform(0.0, 2.0), density);
      for (int k = 0; k < pieces; ++k) {
        const int w = uniform_int(rng, 2, 4), h = uniform_int(rng, 2, 4);
        const int x0 = xs[i] + 6, x1 = xs[i + 1] - 7 - w;
        const int y0 = ys[j] + 6, y1 = ys[j + 1] - 7 - h;
        if (x1 < x0 || y1 < y0) continue;
        const int x = uniform_int(rng, x0, x1), y = uniform_int(rng, y0, y1);
        map.fill(x, y, x + w - 1, y + h - 1);
      }
    }
}

void paint_corridors(Layout& map, Rng& rng, double density) {
  constexpr int kSpacing = 22, kWall = 2;
  const bool horizontal = rng.uniform() < 0.5;
  const int along = horizontal ? map.nx() : map.ny();
  const int across = horizontal ? map.ny() : map.nx();
  for (int w = kSpacing; w + kSpacing / 2 < across; w += kSpacing) {
    auto paint = [&](int a0, int a1, std::uint8_t v) {
      if (horizontal)
        map.fill(a0, w, a1, w + kWall - 1, v);
      else
        map.fill(w, a0, w + kWall - 1, a1, v);
    };
    paint(1, along - 2, 1);
    const int gaps = 2;
    for (int g = 0; g < gaps; ++g) {
      const int width = uniform_int(rng, 10, 14);
      const int lo = 2 + g * (along - 4) / gaps;
      const int hi = 2 + (g + 1) * (along - 4) / gaps - width;
      const int start = uniform_int(rng, lo, std::max(lo, hi));
      paint(start, start + width - 1, 0);
    }
  }
  const int pillars = scaled_count(static_cast<double>(along) * across / 1200.0, density);
  for (int i = 0; i < pillars; ++i) {
    const int s = uniform_int(rng, 2, 3);
    const int x = uniform_int(rng, 2, map.nx() - 3 - s), y = uniform_int(rng, 2, map.ny() - 3 - s);
    map.fill(x, y, x + s - 1, y + s - 1);
  }
}

}  // namespace

WorldModel generate_world(WorldFamily family, std::uint64_t seed, const WorldGenConfig& config) {
  if (config.dims != 2 && config.dims != 3)
    throw std::invalid_argument("generate_world: dims must be 2 or 3");
  for (int a = 0; a < config.dims; ++a)
    if (config.cells[a] < 16)
      throw std::invalid_argument("generate_world: need at least 16 cells per axis");
  if (!(config.density >= 0.0)) throw std::invalid_argument("generate_world: density must be >= 0");

  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(family) + 1));
  Layout map(config.cells[0], config.cells[1]);
  switch (family) {
    case WorldFamily::forest_scatter: paint_forest(map, rng, config.density); break;
    case WorldFamily::rooms: paint_rooms(map, rng, config.density); break;
    case WorldFamily::corridors: paint_corridors(map, rng, config.density); break;
  }
  map.ring();

  GridShape shape{config.dims, {config.cells[0], config.cells[1], config.dims == 3 ? config.cells[2] : 1}};
  std::vector<std::uint8_t> occ(shape.count(), 0);
  for (std::size_t i = 0; i < occ.size(); ++i) {
    const Cell c = shape.cell(i);
    occ[i] = map.at(c[0], c[1]);
    if (config.dims == 3 && (c[2] == 0 || c[2] == shape.size[2] - 1)) occ[i] = 1;
  }
  bool any_free = std::find(occ.begin(), occ.end(), 0) != occ.end();
  if (!any_free)
    throw std::invalid_argument("generate_world: obstacle density leaves no free cell");
  WorldModel world(shape, config.cell_size, std::move(occ), seed);

  const ReachabilityIndex reach(world, config.clearance_radius);
  if (reach.largest_component() < 2)
    throw std::invalid_argument(
        "generate_world: obstacle density leaves no connected free start/goal pair");
  return world;
}

// ---------------------------------------------------------------------------
// Sensing

RangeObservation render_scan(const WorldModel& world, const RobotState& state, std::size_t count,
                             double fov, double max_range) {
  if (count == 0) throw std::invalid_argument("render_scan: need at least one ray");
  if (!(max_range > 0.0)) throw std::invalid_argument("render_scan: max_range must be positive");
  const auto start = world.cell_of(state.position);
  if (!start || world.occupied(*start))
    throw std::invalid_argument("render_scan: robot position is not in free space");

  const GridShape& shape = world.shape();
  const Bounds b = world.bounds();
  const double cs = world.cell_size();
  RangeObservation obs{std::vector<double>(count, max_range), fov, max_range};

  for (std::size_t i = 0; i < count; ++i) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1) - 0.5;
    const double angle = state.heading + fov * frac;
    const Position dir{std::cos(angle), std::sin(angle), 0.0};

    Cell cell = *start;
    std::array<int, 3> step{0, 0, 0};
    std::array<double, 3> t_max{kInf, kInf, kInf}, t_delta{kInf, kInf, kInf};
    for (int a = 0; a < shape.dims; ++a) {
      if (dir[a] > 0.0) {
        step[a] = 1;
        t_max[a] = (b.lo[a] + (cell[a] + 1) * cs - state.position[a]) / dir[a];
        t_delta[a] = cs / dir[a];
      } else if (dir[a] < 0.0) {
        step[a] = -1;
        t_max[a] = (b.lo[a] + cell[a] * cs - state.position[a]) / dir[a];
        t_delta[a] = -cs / dir[a];
      }
    }
    double range = max_range;
    for (;;) {
      int axis = 0;
      for (int a = 1; a < shape.dims; ++a)
        if (t_max[a] < t_max[axis]) axis = a;
      const double t = t_max[axis];
      if (t >= max_range) break;
      cell[axis] += step[axis];
      if (!shape.contains(cell) || world.occupied(cell)) {
        range = std::max(t, 1e-12);
        break;
      }
      t_max[axis] += t_delta[axis];
    }
    obs.ranges[i] = range;
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Collision

double obstacle_distance(const WorldModel& world, const Position& p, double search_radius) {
  const GridShape& shape = world.shape();
  const Bounds b = world.bounds();
  const double cs = world.cell_size();
  double best2 = kInf;
  // Outside space is an obstacle.
  for (int a = 0; a < shape.dims; ++a) {
    const double inside = std::min(p[a] - b.lo[a], b.hi[a] - p[a]);
    if (inside <= 0.0) return 0.0;
    if (inside <= search_radius) best2 = std::min(best2, inside * inside);
  }
  Cell lo{0, 0, 0}, hi{0, 0, 0};
  for (int a = 0; a < shape.dims; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor((p[a] - search_radius - b.lo[a]) / cs)));
    hi[a] = std::min(shape.size[a] - 1,
                     static_cast<int>(std::floor((p[a] + search_radius - b.lo[a]) / cs)));
  }
  Cell c{0, 0, 0};
  for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2])
    for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1])
      for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0]) {
        if (!world.occupied(c)) continue;
        double d2 = 0.0;
        for (int a = 0; a < shape.dims; ++a) {
          const double box_lo = b.lo[a] + c[a] * cs, box_hi = box_lo + cs;
          const double gap = std::max({0.0, box_lo - p[a], p[a] - box_hi});
          d2 += gap * gap;
        }
        best2 = std::min(best2, d2);
      }
  const double d = std::sqrt(best2);
  return d <= search_radius ? d : kInf;
}

bool collides(const WorldModel& world, const Position& point, double radius) {
  return obstacle_distance(world, point, std::max(radius, 0.0)) <= radius;
}

bool collides(const WorldModel& world, std::span<const Position> points, double radius) {
  return std::any_of(points.begin(), points.end(),
                     [&](const Position& p) { return collides(world, p, radius); });
}

std::vector<std::uint8_t> inflate(const WorldModel& world, double radius) {
  const GridShape& shape = world.shape();
  std::vector<std::uint8_t> blocked(shape.count(), 0);
  for (std::size_t i = 0; i < blocked.size(); ++i) {
    const Cell c = shape.cell(i);
    blocked[i] = world.occupied(c) || collides(world, world.cell_center(c), radius);
  }
  return blocked;
}

// ---------------------------------------------------------------------------
// Grid search

namespace {

struct Move {
  Cell offset;
  double length;  // in cells
};

std::vector<Move> moves_for(int dims) {
  std::vector<Move> moves;
  const int zr = dims == 3 ? 1 : 0;
  for (int dz = -zr; dz <= zr; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
        if (nonzero == 0) continue;
        moves.push_back({{dx, dy, dz}, std::sqrt(static_cast<double>(nonzero))});
      }
  return moves;
}

// A move is allowed iff every cell of its bounding box is unblocked.
bool move_allowed(const GridShape& shape, const std::vector<std::uint8_t>& blocked, const Cell& from,
                  const Cell& offset) {
  for (int mz = 0; mz <= (offset[2] != 0); ++mz)
    for (int my = 0; my <= (offset[1] != 0); ++my)
      for (int mx = 0; mx <= (offset[0] != 0); ++mx) {
        const Cell c{from[0] + mx * offset[0], from[1] + my * offset[1], from[2] + mz * offset[2]};
        if (!shape.contains(c) || blocked[shape.index(c)]) return false;
      }
  return true;
}

}  // namespace

std::optional<double> shortest_path_length(const WorldModel& world, const Position& start,
                                           const Position& goal, double radius) {
  const auto blocked = inflate(world, radius);
  const GridShape& shape = world.shape();
  const auto s = world.cell_of(start), g = world.cell_of(goal);
  if (!s || blocked[shape.index(*s)])
    throw std::invalid_argument("shortest_path_length: start is not free after inflation");
  if (!g || blocked[shape.index(*g)])
    throw std::invalid_argument("shortest_path_length: goal is not free after inflation");

  const auto moves = moves_for(shape.dims);
  std::vector<double> dist(shape.count(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const std::size_t target = shape.index(*g);
  dist[shape.index(*s)] = 0.0;
  open.push({0.0, shape.index(*s)});
  while (!open.empty()) {
    const auto [d, idx] = open.top();
    open.pop();
    if (d > dist[idx]) continue;
    if (idx == target) return d * world.cell_size();
    const Cell c = shape.cell(idx);
    for (const Move& m : moves) {
      if (!move_allowed(shape, blocked, c, m.offset)) continue;
      const Cell n{c[0] + m.offset[0], c[1] + m.offset[1], c[2] + m.offset[2]};
      const std::size_t ni = shape.index(n);
      const double nd = d + m.length;
      if (nd < dist[ni]) {
        dist[ni] = nd;
        open.push({nd, ni});
      }
    }
  }
  return std::nullopt;
}

ReachabilityIndex::ReachabilityIndex(const WorldModel& world, double radius) : world_(&world) {
  const auto blocked = inflate(world, radius);
  const GridShape& shape = world.shape();
  const auto moves = moves_for(shape.dims);
  label_.assign(shape.count(), -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < label_.size(); ++seed) {
    if (blocked[seed] || label_[seed] >= 0) continue;
    std::size_t size = 0;
    label_[seed] = next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      ++size;
      const Cell c = shape.cell(idx);
      for (const Move& m : moves) {
        if (!move_allowed(shape, blocked, c, m.offset)) continue;
        const std::size_t ni =
            shape.index({c[0] + m.offset[0], c[1] + m.offset[1], c[2] + m.offset[2]});
        if (label_[ni] < 0) {
          label_[ni] = next;
          stack.push_back(ni);
        }
      }
    }
    largest_ = std::max(largest_, size);
    ++next;
  }
}

bool ReachabilityIndex::feasible(const Position& p) const {
  const auto c = world_->cell_of(p);
  return c && label_[world_->shape().index(*c)] >= 0;
}

bool ReachabilityIndex::connected(const Position& a, const Position& b) const {
  const auto ca = world_->cell_of(a), cb = world_->cell_of(b);
  if (!ca || !cb) return false;
  const int la = label_[world_->shape().index(*ca)], lb = label_[world_->shape().index(*cb)];
  return la >= 0 && la == lb;
}

}  // namespace iplan
