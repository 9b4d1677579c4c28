// Versioned binary checkpoints: a JSON header describing the model shape
// followed by named float64 tensors. The header is the compatibility
// contract; loaders validate it before touching tensor bytes.
#pragma once

#include "carl/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace carl {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json header;
  std::map<std::string, Mat> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::map<std::string, Mat>& tensors);

CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace carl
