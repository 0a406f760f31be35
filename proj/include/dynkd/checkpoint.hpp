#pragma once

#include <filesystem>

#include <json.hpp>

#include "dynkd/nn/model.hpp"

namespace dynkd {

// On-disk layout (little-endian):
//   8 bytes   magic "DYNKDCKP"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header: architecture_id, num_classes, seed, feature_tap,
//             feature_shape [C,H,W], parameter_count, tensors [{name, shape}],
//             metadata {...}
//   doubles   every tensor listed in the header, in header order
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, nn::Model& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  nn::Model model;
  nlohmann::json metadata;
};

/// Rebuilds the architecture from the zoo and restores every tensor. Rejects
/// unknown versions, truncated files and tensor name/shape mismatches.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dynkd
