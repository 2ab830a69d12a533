#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nuta/tensor.hpp"

namespace nuta {

// Checkpoint container: named double tensors in a little-endian binary file
// (magic "NUTACKPT", format version, then name/extents/data records).

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items);

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

// Loads a checkpoint and copies values into the given tensors, matched by
// name. Every target must be present with matching extents; extra names in
// the file are an error (a checkpoint belongs to exactly one architecture).
void load_into(const std::string& path,
               std::vector<std::pair<std::string, Tensor>>& targets);

}  // namespace nuta
