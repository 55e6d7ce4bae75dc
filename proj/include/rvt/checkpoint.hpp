#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rvt/tensor.hpp"

namespace rvt {

// Binary checkpoint: magic "RVTCKPT1", then one record per tensor:
//   u64 name length, name bytes (UTF-8),
//   u64 rank, rank * u64 extents,
//   numel * f64 payload.
// All integers and doubles little-endian. Round-trips are bit-exact.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& named);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Loads into existing tensors, matching by name and verifying shapes.
// Throws on unknown, missing, or shape-mismatched entries.
void load_checkpoint_into(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor>>& named);

}  // namespace rvt
