#pragma once

#include "retgen/core/io.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace retgen {

/// Parameter container on disk: magic, format version, a JSON metadata blob
/// (model config, vocabulary, config hash, seed), then (id, shape, values)
/// records in parameter order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  Json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& id) const;
};

void save_checkpoint(const std::filesystem::path& path, const Json& meta, const ConstParameterList& params);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values from `ckpt` into `params`. Every parameter must be present
/// with an identical shape; anything else is rejected before any copy.
void load_parameters(const Checkpoint& ckpt, const ParameterList& params);

}  // namespace retgen
