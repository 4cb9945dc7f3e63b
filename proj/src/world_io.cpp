#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "iplan/world.hpp"

namespace iplan {

using nlohmann::json;

std::string encode_occupancy(std::span<const std::uint8_t> bits) {
  std::string out;
  std::size_t i = 0;
  while (i < bits.size()) {
    const bool bit = bits[i] != 0;
    std::size_t run = 0;
    while (i < bits.size() && (bits[i] != 0) == bit) ++i, ++run;
    if (!out.empty()) out += ' ';
    out += bit ? '1' : '0';
    out += 'x';
    out += std::to_string(run);
  }
  return out;
}

std::vector<std::uint8_t> decode_occupancy(std::string_view text, std::size_t expected) {
  std::vector<std::uint8_t> bits;
  bits.reserve(expected);
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == ' ') {
      ++pos;
      continue;
    }
    if (pos + 2 >= text.size() || (text[pos] != '0' && text[pos] != '1') || text[pos + 1] != 'x')
      throw std::invalid_argument("occupancy: malformed run near offset " + std::to_string(pos));
    const std::uint8_t bit = text[pos] == '1';
    std::size_t run = 0;
    const char* first = text.data() + pos + 2;
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, run);
    if (ec != std::errc() || run == 0)
      throw std::invalid_argument("occupancy: bad run length near offset " + std::to_string(pos));
    if (bits.size() + run > expected) throw std::invalid_argument("occupancy: too many cells");
    bits.insert(bits.end(), run, bit);
    pos = static_cast<std::size_t>(ptr - text.data());
  }
  if (bits.size() != expected)
    throw std::invalid_argument("occupancy: expected " + std::to_string(expected) + " cells, got " +
                                std::to_string(bits.size()));
  return bits;
}

json world_to_json(const WorldModel& world) {
  const Bounds b = world.bounds();
  json lo = json::array(), hi = json::array();
  for (int a = 0; a < world.dims(); ++a) {
    lo.push_back(b.lo[a]);
    hi.push_back(b.hi[a]);
  }
  return json{{"version", 1},
              {"dims", world.dims()},
              {"cell_size", world.cell_size()},
              {"bounds", {{"lo", lo}, {"hi", hi}}},
              {"seed", world.seed()},
              {"occupancy", encode_occupancy(world.occupancy())}};
}

WorldModel world_from_json(const json& doc) {
  if (doc.at("version").get<int>() != 1) throw std::invalid_argument("world file: unsupported version");
  const int dims = doc.at("dims").get<int>();
  if (dims != 2 && dims != 3) throw std::invalid_argument("world file: dims must be 2 or 3");
  const double cs = doc.at("cell_size").get<double>();
  const auto& lo = doc.at("bounds").at("lo");
  const auto& hi = doc.at("bounds").at("hi");
  if (lo.size() != static_cast<std::size_t>(dims) || hi.size() != static_cast<std::size_t>(dims))
    throw std::invalid_argument("world file: bounds must have one entry per dimension");
  GridShape shape{dims, {1, 1, 1}};
  Position origin{};
  for (int a = 0; a < dims; ++a) {
    origin[a] = lo[a].get<double>();
    const double extent = hi[a].get<double>() - origin[a];
    const double cells = std::round(extent / cs);
    if (cells < 1 || std::abs(cells * cs - extent) > 1e-9 * std::max(1.0, extent))
      throw std::invalid_argument("world file: bounds are not a whole number of cells");
    shape.size[a] = static_cast<int>(cells);
  }
  auto occ = decode_occupancy(doc.at("occupancy").get<std::string>(), shape.count());
  WorldModel world(shape, cs, std::move(occ), doc.at("seed").get<std::uint64_t>(), origin);
  // Exact agreement with the stored extent.
  const Bounds b = world.bounds();
  for (int a = 0; a < dims; ++a)
    if (b.hi[a] != hi[a].get<double>())
      throw std::invalid_argument("world file: bounds do not round-trip through cell_size");
  return world;
}

void save_world(const WorldModel& world, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write world file " + path.string());
  out << world_to_json(world).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing world file " + path.string());
}

WorldModel load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read world file " + path.string());
  return world_from_json(json::parse(in));
}

}  // namespace iplan
