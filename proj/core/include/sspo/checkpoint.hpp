#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sspo/policy.hpp"

namespace sspo {

// Checkpoint file: one magic line, one JSON header line carrying the model
// config and the task label list, then the flat parameter vector as raw
// little-endian 64-bit floats. Reload is bit-exact.
struct Checkpoint {
  PolicyParams params;
  std::vector<std::string> labels;
};

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params,
                     const std::vector<std::string>& labels);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sspo
