#pragma once

#include "cosmo/params.hpp"

#include <filesystem>
#include <stdexcept>

namespace cosmo::checkpoint {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes <stem>.bin (little-endian fp64 tensors back to back, column-major)
// and <stem>.json (manifest: temperature plus name/shape/dtype/offset per
// tensor).
void save(const ModelParams& params, const std::filesystem::path& stem);
ModelParams load(const std::filesystem::path& stem);

}  // namespace cosmo::checkpoint
