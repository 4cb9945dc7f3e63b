#include "iplan/costmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace iplan {

using nlohmann::json;

namespace {

constexpr double kFar = 1e20;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), squared units.
void envelope_1d(const double* f, std::size_t n, double* out, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -kFar * 10;
  z[1] = kFar * 10;
  for (std::size_t q = 1; q < n; ++q) {
    const double dq = static_cast<double>(q);
    auto meet = [&](std::size_t r) {
      const double dr = static_cast<double>(r);
      return ((f[q] + dq * dq) - (f[r] + dr * dr)) / (2.0 * dq - 2.0 * dr);
    };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);  // z[0] is below every meeting point
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar * 10;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = d * d + f[v[k]];
  }
}

// Applies fn to every 1-D line of the grid along `axis` through a scratch buffer.
template <class Fn>
void for_each_line(const GridShape& shape, int axis, std::vector<double>& data, Fn fn) {
  const std::size_t n = static_cast<std::size_t>(shape.size[axis]);
  std::size_t stride = 1;
  for (int a = 0; a < axis; ++a) stride *= static_cast<std::size_t>(shape.size[a]);
  std::vector<double> line(n), result(n);
  const std::size_t total = shape.count();
  for (std::size_t base = 0; base < total; ++base) {
    // base must be the first element of its line along `axis`.
    if ((base / stride) % n != 0) continue;
    for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
    fn(line, result);
    for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = result[i];
  }
}

}  // namespace

ScalarGrid distance_to_free(const GridShape& shape, std::span<const std::uint8_t> occupancy,
                            double cell_size) {
  if (occupancy.size() != shape.count())
    throw std::invalid_argument("distance_to_free: occupancy size does not match shape");
  if (std::all_of(occupancy.begin(), occupancy.end(), [](std::uint8_t o) { return o != 0; }))
    throw std::invalid_argument("distance_to_free: every cell is an obstacle");

  ScalarGrid out{shape, std::vector<double>(shape.count())};
  for (std::size_t i = 0; i < occupancy.size(); ++i) out.values[i] = occupancy[i] ? kFar : 0.0;

  std::vector<std::size_t> v;
  std::vector<double> z;
  for (int axis = 0; axis < shape.dims; ++axis)
    for_each_line(shape, axis, out.values, [&](const std::vector<double>& in, std::vector<double>& res) {
      envelope_1d(in.data(), in.size(), res.data(), v, z);
    });
  for (double& d : out.values) d = std::sqrt(d) * cell_size;
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * static_cast<std::size_t>(radius) + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += w[static_cast<std::size_t>(k + radius)];
  }
  for (double& x : w) x /= total;
  return w;
}

ScalarGrid gaussian_smooth(const ScalarGrid& field, double sigma) {
  if (field.values.size() != field.shape.count())
    throw std::invalid_argument("gaussian_smooth: value count does not match shape");
  const auto w = gaussian_kernel(sigma);
  const int radius = static_cast<int>(w.size() / 2);
  ScalarGrid out = field;
  for (int axis = 0; axis < field.shape.dims; ++axis)
    for_each_line(field.shape, axis, out.values,
                  [&](const std::vector<double>& in, std::vector<double>& res) {
                    const int n = static_cast<int>(in.size());
                    for (int i = 0; i < n; ++i) {
                      double acc = 0.0;
                      for (int k = -radius; k <= radius; ++k)
                        acc += w[static_cast<std::size_t>(k + radius)] * in[std::clamp(i + k, 0, n - 1)];
                      res[i] = acc;
                    }
                  });
  return out;
}

// ---------------------------------------------------------------------------

CostMap::CostMap(GridShape shape, double cell_size, Position origin, double sigma,
                 std::vector<float> values, double value_scale, double oob_slope)
    : shape_(shape),
      cell_size_(cell_size),
      origin_(origin),
      sigma_(sigma),
      values_(std::move(values)),
      value_scale_(value_scale),
      oob_slope_(oob_slope) {
  if (values_.size() != shape_.count())
    throw std::invalid_argument("CostMap: value count does not match shape");
  if (!(cell_size_ > 0.0)) throw std::invalid_argument("CostMap: cell_size must be positive");
  for (float v : values_)
    if (!(v >= 0.0f) || !std::isfinite(v))
      throw std::invalid_argument("CostMap: values must be finite and non-negative");
}

double CostMap::max_value() const {
  float m = 0.0f;
  for (float v : values_) m = std::max(m, v);
  return m;
}

CostSample CostMap::sample(const Position& p) const {
  const int d = shape_.dims;
  std::array<int, 3> base{0, 0, 0};
  std::array<double, 3> frac{0, 0, 0};
  std::array<bool, 3> clamped{false, false, false};
  std::array<bool, 3> flat{true, true, true};
  CostSample s;
  double penalty = 0.0;
  for (int a = 0; a < d; ++a) {
    const int n = shape_.size[a];
    const double u = (p[a] - origin_[a]) / cell_size_;
    const double lo_bound = -0.5, hi_bound = n - 0.5;  // world bounds in cell units
    if (u < lo_bound) {
      penalty += oob_slope_ * (lo_bound - u) * cell_size_;
      s.gradient[a] -= oob_slope_;
    } else if (u > hi_bound) {
      penalty += oob_slope_ * (u - hi_bound) * cell_size_;
      s.gradient[a] += oob_slope_;
    }
    if (n == 1) continue;
    flat[a] = false;
    double uc = u;
    if (uc <= 0.0) {
      uc = 0.0;
      clamped[a] = u < 0.0;
    } else if (uc >= n - 1) {
      uc = n - 1;
      clamped[a] = u > n - 1;
    }
    base[a] = std::min(static_cast<int>(std::floor(uc)), n - 2);
    frac[a] = uc - base[a];
  }

  double value = 0.0;
  std::array<double, 3> grad{0, 0, 0};
  const int corners = 1 << d;
  for (int corner = 0; corner < corners; ++corner) {
    Cell c{0, 0, 0};
    std::array<double, 3> w{1, 1, 1}, dw{0, 0, 0};
    bool skip = false;
    for (int a = 0; a < d; ++a) {
      const int bit = (corner >> a) & 1;
      if (flat[a]) {
        if (bit) skip = true;
        continue;
      }
      c[a] = base[a] + bit;
      w[a] = bit ? frac[a] : 1.0 - frac[a];
      dw[a] = bit ? 1.0 : -1.0;
    }
    if (skip) continue;
    const double v = values_[shape_.index(c)];
    double wprod = 1.0;
    for (int a = 0; a < d; ++a) wprod *= w[a];
    value += wprod * v;
    for (int a = 0; a < d; ++a) {
      if (flat[a] || clamped[a]) continue;
      double g = dw[a] / cell_size_;
      for (int b = 0; b < d; ++b)
        if (b != a) g *= w[b];
      grad[a] += g * v;
    }
  }
  s.value = value + penalty;
  for (int a = 0; a < d; ++a) s.gradient[a] += grad[a];
  return s;
}

CostMap CostMap::normalized() const {
  const double m = max_value();
  if (m <= 0.0) return *this;
  std::vector<float> v(values_.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<float>(static_cast<double>(values_[i]) / m);
  return CostMap(shape_, cell_size_, origin_, sigma_, std::move(v), value_scale_ / m, oob_slope_);
}

CostMap build_costmap(const WorldModel& world, double sigma, double oob_slope, double inflation) {
  if (!(inflation >= 0.0)) throw std::invalid_argument("build_costmap: inflation must be >= 0");
  const std::vector<std::uint8_t> blocked =
      inflation > 0.0 ? inflate(world, inflation)
                      : std::vector<std::uint8_t>(world.occupancy().begin(), world.occupancy().end());
  const ScalarGrid dist = distance_to_free(world.shape(), blocked, world.cell_size());
  const ScalarGrid smooth = gaussian_smooth(dist, sigma);
  std::vector<float> values(smooth.values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<float>(std::max(0.0, smooth.values[i]));
  return CostMap(world.shape(), world.cell_size(), world.cell_center({0, 0, 0}), sigma,
                 std::move(values), 1.0, oob_slope);
}

ad::Tensor sample_costs(const CostMap& map, const ad::Tensor& points) {
  const auto& shape = points.shape();
  const std::size_t dims = static_cast<std::size_t>(map.dims());
  if (shape.size() != 2 || shape[1] != dims)
    throw ad::ShapeError("sample_costs: expected N x " + std::to_string(dims) + " points, got " +
                         ad::shape_string(shape));
  const std::size_t n = shape[0];
  const auto x = points.values();
  std::vector<double> out(n);
  std::vector<double> grads(n * dims);
  for (std::size_t i = 0; i < n; ++i) {
    Position p{};
    for (std::size_t a = 0; a < dims; ++a) p[a] = x[i * dims + a];
    const CostSample s = map.sample(p);
    out[i] = s.value;
    for (std::size_t a = 0; a < dims; ++a) grads[i * dims + a] = s.gradient[a];
  }
  const std::size_t ip = points.id();
  const ad::Tensor in[] = {points};
  return points.tape()->record({n}, std::move(out), in,
                               [ip, grads = std::move(grads), dims, n](ad::Tape& t, std::size_t self) {
                                 const auto g = t.grad_of(self);
                                 auto gp = t.accumulate(ip);
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t a = 0; a < dims; ++a)
                                     gp[i * dims + a] += g[i] * grads[i * dims + a];
                               });
}

// ---------------------------------------------------------------------------
// Export

json costmap_sidecar(const CostMap& map) {
  const double m = map.max_value();
  json shape = json::array(), origin = json::array();
  for (int a = 0; a < map.dims(); ++a) {
    shape.push_back(map.shape().size[a]);
    origin.push_back(map.origin()[a]);
  }
  return json{{"version", 1},
              {"dims", map.dims()},
              {"shape", shape},
              {"cell_size", map.cell_size()},
              {"origin", origin},
              {"sigma", map.sigma()},
              {"scale", m > 0.0 ? 65535.0 / m : 1.0},
              {"value_scale", map.value_scale()},
              {"oob_slope", map.oob_slope()}};
}

void write_pgm16(const CostMap& map, const std::filesystem::path& path, double scale) {
  const GridShape& s = map.shape();
  const int nx = s.size[0], ny = s.size[1];
  const int z = s.dims == 3 ? s.size[2] / 2 : 0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << nx << ' ' << ny << "\n65535\n";
  std::vector<unsigned char> row(2 * static_cast<std::size_t>(nx));
  for (int y = ny - 1; y >= 0; --y) {  // north up
    for (int x = 0; x < nx; ++x) {
      const double q = std::round(map.at({x, y, z}) * scale);
      const auto v = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
      row[2 * x] = static_cast<unsigned char>(v >> 8);
      row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void save_costmap(const CostMap& map, const std::filesystem::path& stem) {
  json side = costmap_sidecar(map);
  const std::filesystem::path raw = std::filesystem::path(stem).replace_extension(".f32");
  const std::filesystem::path pgm = std::filesystem::path(stem).replace_extension(".pgm");
  side["raw"] = raw.filename().string();
  side["preview"] = pgm.filename().string();

  std::ofstream meta(std::filesystem::path(stem).replace_extension(".json"));
  if (!meta) throw std::runtime_error("cannot write cost-map sidecar for " + stem.string());
  meta << side.dump(2) << '\n';

  std::ofstream out(raw, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + raw.string());
  for (float v : map.values()) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw std::runtime_error("failed writing " + raw.string());
  write_pgm16(map, pgm, side.at("scale").get<double>());
}

CostMap load_costmap(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw std::runtime_error("cannot read cost-map sidecar " + sidecar.string());
  const json side = json::parse(in);
  GridShape shape{side.at("dims").get<int>(), {1, 1, 1}};
  Position origin{};
  for (int a = 0; a < shape.dims; ++a) {
    shape.size[a] = side.at("shape").at(a).get<int>();
    origin[a] = side.at("origin").at(a).get<double>();
  }
  const auto raw = sidecar.parent_path() / side.at("raw").get<std::string>();
  std::ifstream data(raw, std::ios::binary);
  if (!data) throw std::runtime_error("cannot read cost-map data " + raw.string());
  std::vector<float> values(shape.count());
  for (float& v : values) {
    unsigned char b[4];
    data.read(reinterpret_cast<char*>(b), 4);
    if (!data) throw std::runtime_error("cost-map data truncated: " + raw.string());
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                               (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return CostMap(shape, side.at("cell_size").get<double>(), origin, side.at("sigma").get<double>(),
                 std::move(values), side.at("value_scale").get<double>(),
                 side.at("oob_slope").get<double>());
}

}  // namespace iplan
