#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dynkd/nn/model.hpp"

namespace dynkd::nn {

enum class ZooRole { teacher, student, either };
enum class ZooScale { tiny, full };

struct ZooEntry {
  std::string id;
  std::string description;
  ZooRole role;
  ZooScale scale;
};

const std::vector<ZooEntry>& model_zoo();
const ZooEntry& zoo_entry(std::string_view id);

/// Deterministic for a fixed (id, num_classes, seed). Full-scale entries
/// (ResNet-34/50, VGG-16, MobileNetV2 in their 32x32 variants) are refused
/// unless `allow_full_scale` is set.
Model build_model(std::string_view id, int num_classes, std::uint64_t seed,
                  bool allow_full_scale = false);

}  // namespace dynkd::nn
