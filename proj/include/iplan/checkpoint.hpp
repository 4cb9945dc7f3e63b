#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iplan/optimizer.hpp"

namespace iplan::ad {

/// Named float64 arrays plus free-form metadata.
///
/// On disk: one line of JSON {version, dtype, names, shapes, offsets, bytes,
/// meta} terminated by '\n', then the arrays as concatenated little-endian
/// IEEE-754 doubles. Offsets are byte positions after the newline.
struct Checkpoint {
  std::vector<Parameter> arrays;
  nlohmann::json meta = nlohmann::json::object();

  const Parameter& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace iplan::ad
