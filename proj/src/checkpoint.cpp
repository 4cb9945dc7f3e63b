#include "iplan/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace iplan::ad {

using nlohmann::json;

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

}  // namespace

const Parameter& Checkpoint::find(const std::string& name) const {
  for (const Parameter& p : arrays)
    if (p.name == name) return p;
  throw std::out_of_range("checkpoint: no array named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const Parameter& p : arrays)
    if (p.name == name) return true;
  return false;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json names = json::array(), shapes = json::array(), offsets = json::array();
  std::uint64_t offset = 0;
  for (const Parameter& p : ckpt.arrays) {
    if (p.values.size() != element_count(p.shape))
      throw ShapeError("checkpoint: '" + p.name + "' value count does not match its shape");
    names.push_back(p.name);
    shapes.push_back(p.shape);
    offsets.push_back(offset);
    offset += 8 * p.values.size();
  }
  const json header{{"version", 1},       {"dtype", "float64-le"}, {"names", names},
                    {"shapes", shapes},   {"offsets", offsets},    {"bytes", offset},
                    {"meta", ckpt.meta}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  std::vector<char> buf;
  for (const Parameter& p : ckpt.arrays) {
    buf.resize(8 * p.values.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const std::uint64_t le = to_little(std::bit_cast<std::uint64_t>(p.values[i]));
      std::memcpy(buf.data() + 8 * i, &le, 8);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: missing header in " + path.string());
  const json header = json::parse(line);
  if (header.at("version").get<int>() != 1 || header.at("dtype").get<std::string>() != "float64-le")
    throw std::runtime_error("checkpoint: unsupported version or dtype");
  const auto& names = header.at("names");
  const auto& shapes = header.at("shapes");
  const auto& offsets = header.at("offsets");
  if (names.size() != shapes.size() || names.size() != offsets.size())
    throw std::runtime_error("checkpoint: header arrays disagree in length");

  const std::uint64_t bytes = header.at("bytes").get<std::uint64_t>();
  std::vector<char> data(bytes);
  in.read(data.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes)
    throw std::runtime_error("checkpoint: truncated data in " + path.string());

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (std::size_t k = 0; k < names.size(); ++k) {
    Parameter p;
    p.name = names[k].get<std::string>();
    p.shape = shapes[k].get<Shape>();
    const std::uint64_t off = offsets[k].get<std::uint64_t>();
    const std::size_t n = element_count(p.shape);
    if (off + 8 * n > bytes) throw std::runtime_error("checkpoint: array '" + p.name + "' overruns data");
    p.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t le = 0;
      std::memcpy(&le, data.data() + off + 8 * i, 8);
      p.values[i] = std::bit_cast<double>(to_little(le));
    }
    ckpt.arrays.push_back(std::move(p));
  }
  return ckpt;
}

}  // namespace iplan::ad
